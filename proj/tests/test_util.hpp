// Shared helpers for the unit tests.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "hear/autodiff.hpp"
#include "hear/gradcheck.hpp"
#include "hear/rng.hpp"
#include "hear/tensor.hpp"

namespace hear::testutil {

// Scratch directory removed on destruction.
class TempDir {
public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() /
                        "hear_test_XXXXXX")
                           .string();
    char* made = ::mkdtemp(tmpl.data());
    if (made == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = made;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

private:
  std::filesystem::path path_;
};

inline std::string fixture_dictionary_path() {
  return std::string(HEAR_SOURCE_DATA_DIR) + "/global_dictionary.txt";
}

// Builds a fresh tape around x, runs backward on the scalar the builder
// returns, and compares the analytic gradient of x against central finite
// differences of the rebuilt loss.
inline FdReport check_input_grad(
    const std::function<Var(Tape<double>&, Var)>& build, Tensor<double> x,
    double h = 1e-5) {
  Tape<double> tape;
  Var xv = tape.input(x);
  Var loss = build(tape, xv);
  tape.backward(loss);
  Tensor<double> analytic = tape.grad(xv);
  auto loss_value = [&]() {
    Tape<double> t2;
    Var x2 = t2.input(x);
    Var l2 = build(t2, x2);
    return t2.value(l2)[0];
  };
  return fd_check(loss_value, x, analytic, h, 1e-4);
}

}  // namespace hear::testutil

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hear/gradcheck.hpp"
#include "hear/model.hpp"
#include "test_util.hpp"

using hear::ForwardOptions;
using hear::ForwardResult;
using hear::GraphBuilder;
using hear::Model;
using hear::ModelConfig;
using hear::ModelVariant;
using hear::Shape;
using hear::Tape;
using hear::Tensor;
using hear::Var;

namespace {

ModelConfig small_config() {
  return hear::make_config(ModelVariant::tiny, 8, 8, 4, 16);
}

Tensor<double> randn(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  hear::Rng rng(seed);
  return Tensor<double>::randn(std::move(shape), rng, stddev);
}

Tensor<double> forward_hidden(Model<double>& m, const Tensor<double>& patches,
                              const Tensor<double>& coords,
                              const ForwardOptions<double>& opt = {}) {
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  ForwardResult<double> fr =
      hear::full_forward(gb, tape.constant(patches), tape.constant(coords),
                         opt);
  return tape.value(fr.hidden);
}

// y[j] += sum_k x[k] * w[k, j] for w stored [in, out].
std::vector<double> affine_ref(const Tensor<double>& w,
                               const Tensor<double>& b, const double* x) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) y[j] = b[j];
  for (std::size_t k = 0; k < in; ++k) {
    for (std::size_t j = 0; j < out; ++j) y[j] += x[k] * w[k * out + j];
  }
  return y;
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
}

}  // namespace

TEST_CASE("model config validation") {
  CHECK_NOTHROW(hear::make_config(ModelVariant::tiny, 16));
  const ModelConfig base = hear::make_config(ModelVariant::base, 16);
  CHECK(base.num_layers == 12);
  CHECK(base.num_heads == 8);

  ModelConfig bad = small_config();
  bad.hidden_dim = 10;  // not divisible by 4 heads
  CHECK_THROWS_AS(hear::validate(bad), hear::ConfigError);

  ModelConfig wrong_depth = small_config();
  wrong_depth.num_layers = 12;
  CHECK_THROWS_AS(hear::validate(wrong_depth), hear::ConfigError);

  ModelConfig zero = small_config();
  zero.window_len = 0;
  CHECK_THROWS_AS(hear::validate(zero), hear::ConfigError);
}

TEST_CASE("model initialization is seed-deterministic") {
  const ModelConfig cfg = small_config();
  Model<double> a = hear::init_model<double>(cfg, 5);
  Model<double> b = hear::init_model<double>(cfg, 5);
  Model<double> c = hear::init_model<double>(cfg, 6);
  REQUIRE(a.params.count() == b.params.count());
  bool all_equal = true;
  bool any_diff_from_c = false;
  for (std::size_t i = 0; i < a.params.count(); ++i) {
    if (a.params.value(i).vec() != b.params.value(i).vec()) all_equal = false;
    if (a.params.value(i).vec() != c.params.value(i).vec()) {
      any_diff_from_c = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_from_c);
  CHECK(a.params.value("temporal.b1").vec() ==
        std::vector<double>(8, 0.0));
  CHECK(a.params.value("layer0.ln1.gamma").vec() ==
        std::vector<double>(8, 1.0));
}

TEST_CASE("temporal encoder maps patches independently of position") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 11);
  Tensor<double> patches = randn({1, 3, 2, 8}, 21);
  for (std::size_t j = 0; j < 8; ++j) {
    patches.at({0, 2, 1, j}) = patches.at({0, 0, 0, j});
  }
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  Var emb = hear::temporal_encode(gb, tape.constant(patches));
  const Tensor<double>& ev = tape.value(emb);
  REQUIRE(ev.shape() == Shape{1, 3, 2, 8});
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(ev.at({0, 2, 1, j}) == ev.at({0, 0, 0, j}));
  }
}

TEST_CASE("temporal encoder sends the zero patch to the zero embedding") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 11);
  m.params.value("temporal.w2").fill(0.0);
  Tensor<double> patches({1, 2, 2, 8});
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  Var emb = hear::temporal_encode(gb, tape.constant(patches));
  for (double v : tape.value(emb).vec()) CHECK(v == 0.0);
}

TEST_CASE("temporal encoder rejects a mismatched window") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 11);
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  CHECK_THROWS_AS(hear::temporal_encode(gb, tape.constant(randn({1, 2, 2, 7}, 1))),
                  hear::ShapeMismatch);
}

TEST_CASE("spatial embedding depends only on the coordinate row") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 13);
  Tensor<double> coords = randn({4, 3}, 31, 0.05);
  for (std::size_t j = 0; j < 3; ++j) {
    coords.at({2, j}) = coords.at({0, j});
  }
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  Var s = hear::spatial_embed(gb, tape.constant(coords));
  const Tensor<double>& sv = tape.value(s);
  REQUIRE(sv.shape() == Shape{4, 8});
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(sv.at({2, j}) == sv.at({0, j}));
  }

  Var empty = hear::spatial_embed(gb, tape.constant(Tensor<double>({0, 3})));
  CHECK(tape.value(empty).shape() == Shape{0, 8});

  Tensor<double> bad({1, 3});
  bad[0] = std::nan("");
  CHECK_THROWS_AS(hear::spatial_embed(gb, tape.constant(bad)),
                  hear::NonFiniteInput);
}

TEST_CASE("spatial embedding gradient w.r.t. coordinates matches finite "
          "differences") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 17);
  const hear::FdReport rep = hear::testutil::check_input_grad(
      [&](Tape<double>& tape, Var coords) {
        GraphBuilder<double> gb(tape, m);
        return tape.sum(tape.square(hear::spatial_embed(gb, coords)));
      },
      randn({3, 3}, 41, 0.05));
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("token assembly broadcasts spatial and temporal additions") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 19);
  const Tensor<double> pe = randn({1, 2, 2, 8}, 43);
  const Tensor<double> s = randn({2, 8}, 44);

  SECTION("zero patch embedding and zero table leave only spatial rows") {
    m.params.value("temporal_table").fill(0.0);
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    auto ta = hear::assemble_tokens(gb, tape.constant(Tensor<double>({1, 2, 2, 8})),
                                    tape.constant(s));
    const Tensor<double>& tv = tape.value(ta.tokens);
    REQUIRE(tv.shape() == Shape{1, 5, 8});
    for (std::size_t e = 0; e < 2; ++e) {
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t j = 0; j < 8; ++j) {
          CHECK(tv.at({0, 1 + e * 2 + t, j}) == s.at({e, j}));
        }
      }
    }
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(tv.at({0, 0, j}) == m.params.value("cls")[j]);
    }
  }

  SECTION("zero spatial and zero table reproduce the patch embeddings") {
    m.params.value("temporal_table").fill(0.0);
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    auto ta = hear::assemble_tokens(gb, tape.constant(pe),
                                    tape.constant(Tensor<double>({2, 8})));
    const Tensor<double>& tv = tape.value(ta.tokens);
    for (std::size_t e = 0; e < 2; ++e) {
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t j = 0; j < 8; ++j) {
          CHECK(tv.at({0, 1 + e * 2 + t, j}) == pe.at({0, e, t, j}));
        }
      }
    }
  }

  SECTION("swapping channel rows swaps the token blocks") {
    Tensor<double> pe_sw = pe;
    Tensor<double> s_sw = s;
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        std::swap(pe_sw.at({0, 0, t, j}), pe_sw.at({0, 1, t, j}));
      }
    }
    for (std::size_t j = 0; j < 8; ++j) {
      std::swap(s_sw.at({0, j}), s_sw.at({1, j}));
    }
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    auto t1 = hear::assemble_tokens(gb, tape.constant(pe), tape.constant(s));
    auto t2 = hear::assemble_tokens(gb, tape.constant(pe_sw),
                                    tape.constant(s_sw));
    const Tensor<double>& v1 = tape.value(t1.tokens);
    const Tensor<double>& v2 = tape.value(t2.tokens);
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(v2.at({0, 1 + 0 * 2 + t, j}) == v1.at({0, 1 + 1 * 2 + t, j}));
        CHECK(v2.at({0, 1 + 1 * 2 + t, j}) == v1.at({0, 1 + 0 * 2 + t, j}));
        CHECK(v2.at({0, 0, j}) == v1.at({0, 0, j}));
      }
    }
  }

  SECTION("too many time patches overflow") {
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    CHECK_THROWS_AS(
        hear::assemble_tokens(gb, tape.constant(randn({1, 2, 5, 8}, 3)),
                              tape.constant(s)),
        hear::TimeOverflow);
  }
}

TEST_CASE("single-channel attention reduces to the value path") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 23);
  const Tensor<double> x = randn({2, 1, 3, 8}, 51);
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  auto ca = hear::channel_slice_attention(gb, tape.constant(x));
  const Tensor<double>& out = tape.value(ca.output);
  const Tensor<double>& probs = tape.value(ca.probs);
  REQUIRE(probs.shape() == Shape{6, 4, 1, 1});
  for (double p : probs.vec()) CHECK(p == 1.0);

  const Tensor<double>& wv = m.params.value("chan_attn.wv");
  const Tensor<double>& bv = m.params.value("chan_attn.bv");
  const Tensor<double>& wo = m.params.value("chan_attn.wo");
  const Tensor<double>& bo = m.params.value("chan_attn.bo");
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 3; ++t) {
      const double* row = x.data() + ((b * 1 + 0) * 3 + t) * 8;
      const std::vector<double> v = affine_ref(wv, bv, row);
      const std::vector<double> o = affine_ref(wo, bo, v.data());
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(out.at({b, 0, t, j}) ==
              Catch::Approx(row[j] + o[j]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("channel attention is permutation-equivariant") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 29);
  const Tensor<double> x = randn({1, 4, 2, 8}, 53);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor<double> xp({1, 4, 2, 8});
  for (std::size_t e = 0; e < 4; ++e) {
    for (std::size_t k = 0; k < 16; ++k) {
      xp[e * 16 + k] = x[perm[e] * 16 + k];
    }
  }
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  auto a = hear::channel_slice_attention(gb, tape.constant(x));
  auto b = hear::channel_slice_attention(gb, tape.constant(xp));
  const Tensor<double>& av = tape.value(a.output);
  const Tensor<double>& bv = tape.value(b.output);
  for (std::size_t e = 0; e < 4; ++e) {
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(bv[e * 16 + k] ==
            Catch::Approx(av[perm[e] * 16 + k]).margin(1e-12));
    }
  }
}

TEST_CASE("channel attention treats identical time slices identically") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 31);
  Tensor<double> x = randn({1, 3, 2, 8}, 57);
  for (std::size_t e = 0; e < 3; ++e) {
    for (std::size_t j = 0; j < 8; ++j) {
      x.at({0, e, 1, j}) = x.at({0, e, 0, j});
    }
  }
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  auto ca = hear::channel_slice_attention(gb, tape.constant(x));
  const Tensor<double>& out = tape.value(ca.output);
  for (std::size_t e = 0; e < 3; ++e) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(out.at({0, e, 1, j}) == out.at({0, e, 0, j}));
    }
  }
}

TEST_CASE("spatial bias diagonal equals the bias network at zero") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 37);
  // Non-zero MLP biases make the zero-input output non-trivial.
  {
    hear::Rng rng(97);
    for (auto& v : m.params.value("bias_mlp.b1").vec()) {
      v = 0.1 * rng.next_normal();
    }
    for (auto& v : m.params.value("bias_mlp.b2").vec()) {
      v = 0.1 * rng.next_normal();
    }
  }
  const Tensor<double>& w2 = m.params.value("bias_mlp.w2");
  const Tensor<double>& b1 = m.params.value("bias_mlp.b1");
  const Tensor<double>& b2 = m.params.value("bias_mlp.b2");
  std::vector<double> hidden(32);
  for (std::size_t k = 0; k < 32; ++k) hidden[k] = gelu_ref(b1[k]);
  std::vector<double> at_zero(4);
  for (std::size_t h = 0; h < 4; ++h) {
    double acc = b2[h];
    for (std::size_t k = 0; k < 32; ++k) acc += hidden[k] * w2[k * 4 + h];
    at_zero[h] = acc;
  }

  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);

  SECTION("random coordinates: diagonal only") {
    const Tensor<double> coords = randn({5, 3}, 61, 0.05);
    Var bias = hear::compute_spatial_bias(gb, tape.constant(coords));
    const Tensor<double>& bvv = tape.value(bias);
    REQUIRE(bvv.shape() == Shape{4, 5, 5});
    for (std::size_t h = 0; h < 4; ++h) {
      for (std::size_t e = 0; e < 5; ++e) {
        CHECK(bvv.at({h, e, e}) == Catch::Approx(at_zero[h]).margin(1e-12));
      }
    }
  }

  SECTION("coincident electrodes: every entry") {
    Tensor<double> coords({3, 3});
    for (std::size_t e = 0; e < 3; ++e) {
      coords.at({e, 0}) = 0.01;
      coords.at({e, 1}) = -0.02;
      coords.at({e, 2}) = 0.04;
    }
    Var bias = hear::compute_spatial_bias(gb, tape.constant(coords));
    const Tensor<double>& bvv = tape.value(bias);
    for (std::size_t h = 0; h < 4; ++h) {
      for (std::size_t i = 0; i < 9; ++i) {
        CHECK(bvv[h * 9 + i] == Catch::Approx(at_zero[h]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("spatial bias is translation invariant") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 41);
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);

  SECTION("exact on dyadic coordinates") {
    hear::Rng rng(67);
    Tensor<double> coords({6, 3});
    for (auto& v : coords.vec()) {
      v = static_cast<double>(static_cast<long long>(rng.next_below(205)) -
                              102) /
          256.0;
    }
    Tensor<double> shifted = coords;
    const double shift[3] = {0.125, -0.25, 0.0625};
    for (std::size_t e = 0; e < 6; ++e) {
      for (std::size_t j = 0; j < 3; ++j) shifted.at({e, j}) += shift[j];
    }
    Var a = hear::compute_spatial_bias(gb, tape.constant(coords));
    Var b = hear::compute_spatial_bias(gb, tape.constant(shifted));
    CHECK(tape.value(a).vec() == tape.value(b).vec());
  }

  SECTION("tight tolerance on arbitrary coordinates") {
    const Tensor<double> coords = randn({5, 3}, 71, 0.05);
    Tensor<double> shifted = coords;
    for (std::size_t e = 0; e < 5; ++e) {
      shifted.at({e, 0}) += 0.0371;
      shifted.at({e, 1}) -= 0.0213;
      shifted.at({e, 2}) += 0.0157;
    }
    Var a = hear::compute_spatial_bias(gb, tape.constant(coords));
    Var b = hear::compute_spatial_bias(gb, tape.constant(shifted));
    CHECK(hear::max_rel_diff(tape.value(a), tape.value(b)) < 1e-9);
  }
}

TEST_CASE("transformer with zero bias equals the unbiased transformer") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 43);
  const Tensor<double> tokens = randn({2, 5, 8}, 73);
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  auto biased = hear::transformer_forward(
      gb, tape.constant(tokens), tape.constant(Tensor<double>({4, 5, 5})));
  auto plain =
      hear::transformer_forward(gb, tape.constant(tokens), std::nullopt);
  CHECK(tape.value(biased.hidden).vec() == tape.value(plain.hidden).vec());
}

TEST_CASE("transformer rejects a bias of the wrong size") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 43);
  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  CHECK_THROWS_AS(
      hear::transformer_forward(gb, tape.constant(randn({1, 5, 8}, 2)),
                                tape.constant(Tensor<double>({4, 6, 6}))),
      hear::ShapeMismatch);
}

TEST_CASE("attention rows are invariant to whole-row bias shifts only") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 47);
  const Tensor<double> tokens = randn({1, 5, 8}, 79);
  Tensor<double> bias0 = randn({4, 5, 5}, 83, 0.3);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      bias0.at({h, 0, i}) = 0.0;
      bias0.at({h, i, 0}) = 0.0;
    }
  }
  const std::size_t row = 2;
  const double c = 0.7;
  Tensor<double> whole = bias0;
  Tensor<double> partial = bias0;
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      whole.at({h, row, i}) += c;
      if (i != 0) partial.at({h, row, i}) += c;
    }
  }

  Tape<double> tape;
  GraphBuilder<double> gb(tape, m);
  auto r0 = hear::transformer_forward(gb, tape.constant(tokens),
                                      tape.constant(bias0), true);
  auto rw = hear::transformer_forward(gb, tape.constant(tokens),
                                      tape.constant(whole), true);
  auto rp = hear::transformer_forward(gb, tape.constant(tokens),
                                      tape.constant(partial), true);
  const Tensor<double>& p0 = tape.value(r0.attention[0]);
  const Tensor<double>& pw = tape.value(rw.attention[0]);
  const Tensor<double>& pp = tape.value(rp.attention[0]);
  double max_whole = 0.0;
  double max_partial = 0.0;
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t idx = (h * 5 + row) * 5 + i;
      max_whole = std::max(max_whole, std::abs(pw[idx] - p0[idx]));
      max_partial = std::max(max_partial, std::abs(pp[idx] - p0[idx]));
    }
  }
  CHECK(max_whole < 1e-12);
  CHECK(max_partial > 1e-6);
}

TEST_CASE("CLS attention row ignores the spatial bias at the first layer") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 53);
  const Tensor<double> patches = randn({1, 3, 2, 8}, 89);
  const Tensor<double> coords = randn({3, 3}, 91, 0.05);
  ForwardOptions<double> with_bias;
  with_bias.capture_layer_attention = true;
  ForwardOptions<double> no_bias = with_bias;
  no_bias.use_spatial_bias = false;

  Tape<double> t1;
  GraphBuilder<double> g1(t1, m);
  auto f1 = hear::full_forward(g1, t1.constant(patches), t1.constant(coords),
                               with_bias);
  Tape<double> t2;
  GraphBuilder<double> g2(t2, m);
  auto f2 = hear::full_forward(g2, t2.constant(patches), t2.constant(coords),
                               no_bias);
  const Tensor<double>& a1 = t1.value(f1.layer_attention[0]);
  const Tensor<double>& a2 = t2.value(f2.layer_attention[0]);
  REQUIRE(a1.shape() == Shape{1, 4, 7, 7});
  bool cls_rows_equal = true;
  double max_other = 0.0;
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t q = 0; q < 7; ++q) {
      for (std::size_t k = 0; k < 7; ++k) {
        const std::size_t idx = (h * 7 + q) * 7 + k;
        if (q == 0) {
          cls_rows_equal = cls_rows_equal && a1[idx] == a2[idx];
        } else {
          max_other = std::max(max_other, std::abs(a1[idx] - a2[idx]));
        }
      }
    }
  }
  CHECK(cls_rows_equal);
  CHECK(max_other > 1e-8);
}

TEST_CASE("one parameter set runs forward for any layout size") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 59);
  for (std::size_t c : {1u, 3u, 22u, 59u}) {
    for (std::size_t nt : {1u, 2u, 4u}) {
      const Tensor<double> patches =
          randn({1, c, nt, 8}, 100 + c * 10 + nt);
      const Tensor<double> coords = randn({c, 3}, 200 + c, 0.05);
      const Tensor<double> hidden = forward_hidden(m, patches, coords);
      INFO("C=" << c << " N_t=" << nt);
      REQUIRE(hidden.shape() == Shape{1, 1 + c * nt, 8});
      REQUIRE(hidden.all_finite());
    }
  }
}

TEST_CASE("full forward is jointly permutation-equivariant") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 61);
  const std::size_t c = 5;
  const std::size_t nt = 2;
  const Tensor<double> patches = randn({1, c, nt, 8}, 101);
  const Tensor<double> coords = randn({c, 3}, 103, 0.05);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor<double> pp({1, c, nt, 8});
  Tensor<double> pc({c, 3});
  for (std::size_t e = 0; e < c; ++e) {
    std::copy_n(patches.data() + perm[e] * nt * 8, nt * 8,
                pp.data() + e * nt * 8);
    std::copy_n(coords.data() + perm[e] * 3, 3, pc.data() + e * 3);
  }
  const Tensor<double> h1 = forward_hidden(m, patches, coords);
  const Tensor<double> h2 = forward_hidden(m, pp, pc);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(std::abs(h2.at({0, 0, j}) - h1.at({0, 0, j})) < 1e-9);
  }
  for (std::size_t e = 0; e < c; ++e) {
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        const double got = h2.at({0, 1 + e * nt + t, j});
        const double want = h1.at({0, 1 + perm[e] * nt + t, j});
        CHECK(std::abs(got - want) < 1e-9);
      }
    }
  }
}

TEST_CASE("channel activation export") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 67);

  SECTION("single channel maps to one") {
    const std::vector<double> scores = hear::export_channel_activation(
        m, randn({2, 1, 2, 8}, 107), randn({1, 3}, 109, 0.05));
    REQUIRE(scores.size() == 1);
    CHECK(scores[0] == 1.0);
  }

  SECTION("identical channels receive identical mass") {
    Tensor<double> patches({1, 3, 2, 8});
    const Tensor<double> one = randn({1, 1, 2, 8}, 113);
    for (std::size_t e = 0; e < 3; ++e) {
      std::copy_n(one.data(), 16, patches.data() + e * 16);
    }
    Tensor<double> coords({3, 3});
    for (std::size_t e = 0; e < 3; ++e) {
      coords.at({e, 0}) = 0.01;
      coords.at({e, 1}) = 0.02;
      coords.at({e, 2}) = 0.03;
    }
    const std::vector<double> scores =
        hear::export_channel_activation(m, patches, coords);
    REQUIRE(scores.size() == 3);
    for (double s : scores) CHECK(s == 1.0);
  }

  SECTION("received mass sums to one per (slice, head, query)") {
    Model<double>& mm = m;
    Tape<double> tape;
    GraphBuilder<double> gb(tape, mm);
    ForwardOptions<double> opt;
    opt.capture_channel_attention = true;
    auto fr = hear::full_forward(gb, tape.constant(randn({2, 4, 2, 8}, 127)),
                                 tape.constant(randn({4, 3}, 131, 0.05)), opt);
    const Tensor<double>& probs = tape.value(fr.channel_probs);
    REQUIRE(probs.shape() == Shape{4, 4, 4, 4});
    for (std::size_t r = 0; r < 64; ++r) {
      double sum = 0.0;
      for (std::size_t e = 0; e < 4; ++e) sum += probs[r * 4 + e];
      CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
  }

  SECTION("empty batch is rejected") {
    CHECK_THROWS_AS(
        hear::export_channel_activation(m, Tensor<double>({0, 2, 1, 8}),
                                        randn({2, 3}, 137, 0.05)),
        hear::EmptyBatch);
  }
}

TEST_CASE("checkpoint round trip preserves config and parameters") {
  hear::testutil::TempDir dir;
  const ModelConfig cfg = small_config();
  Model<float> m = hear::init_model<float>(cfg, 71);
  const std::string path = dir.file("model.ckpt");
  hear::save_checkpoint(path, m);
  Model<float> r = hear::load_checkpoint<float>(path);
  CHECK(r.config.hidden_dim == cfg.hidden_dim);
  CHECK(r.config.num_layers == cfg.num_layers);
  CHECK(r.config.num_heads == cfg.num_heads);
  CHECK(r.config.window_len == cfg.window_len);
  CHECK(r.config.max_time_patches == cfg.max_time_patches);
  CHECK(r.config.codebook_size == cfg.codebook_size);
  CHECK(r.config.variant == cfg.variant);
  REQUIRE(r.params.count() == m.params.count());
  for (std::size_t i = 0; i < m.params.count(); ++i) {
    CHECK(r.params.name(i) == m.params.name(i));
    REQUIRE(r.params.value(i).shape() == m.params.value(i).shape());
    CHECK(r.params.value(i).vec() == m.params.value(i).vec());
  }
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  hear::testutil::TempDir dir;
  const std::string bad_magic = dir.file("bad.ckpt");
  {
    std::ofstream os(bad_magic, std::ios::binary);
    os.write("XEAR\x01\x00\x00\x00", 8);
  }
  CHECK_THROWS_AS(hear::load_checkpoint<float>(bad_magic), hear::ParseError);

  const ModelConfig cfg = small_config();
  Model<float> m = hear::init_model<float>(cfg, 73);
  const std::string full = dir.file("full.ckpt");
  hear::save_checkpoint(full, m);
  const std::string cut = dir.file("cut.ckpt");
  {
    std::ifstream is(full, std::ios::binary);
    std::vector<char> head(64);
    is.read(head.data(), 64);
    std::ofstream os(cut, std::ios::binary);
    os.write(head.data(), 64);
  }
  CHECK_THROWS_AS(hear::load_checkpoint<float>(cut), hear::ParseError);

  CHECK_THROWS_AS(hear::load_checkpoint<float>(dir.file("missing.ckpt")),
                  hear::ParseError);
}

TEST_CASE("analytic gradients match finite differences across the model") {
  const ModelConfig cfg = small_config();
  Model<double> m = hear::init_model<double>(cfg, 79);
  const Tensor<double> patches = randn({1, 3, 2, 8}, 139);
  const Tensor<double> coords = randn({3, 3}, 149, 0.05);

  auto loss_value = [&]() {
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    auto fr =
        hear::full_forward(gb, tape.constant(patches), tape.constant(coords));
    Var loss = tape.sum(tape.square(fr.hidden));
    return tape.value(loss)[0];
  };

  m.params.zero_grads();
  {
    Tape<double> tape;
    GraphBuilder<double> gb(tape, m);
    auto fr =
        hear::full_forward(gb, tape.constant(patches), tape.constant(coords));
    tape.backward(tape.sum(tape.square(fr.hidden)));
  }

  const char* names[] = {
      "temporal.w1",   "temporal.b1",   "temporal.ln_gamma",
      "temporal.ln_beta", "temporal.w2", "temporal.b2",
      "spatial.w1",    "spatial.b1",    "spatial.w2",    "spatial.b2",
      "temporal_table", "cls",
      "chan_attn.wq",  "chan_attn.wk",  "chan_attn.wv",  "chan_attn.wo",
      "chan_attn.bq",  "chan_attn.bk",  "chan_attn.bv",  "chan_attn.bo",
      "bias_mlp.w1",   "bias_mlp.b1",   "bias_mlp.w2",   "bias_mlp.b2",
      "layer0.attn.wq", "layer0.attn.bq", "layer0.ffn.w1",
      "layer0.ln1.gamma", "final_ln.gamma", "final_ln.beta",
  };
  for (const char* name : names) {
    const hear::FdReport rep =
        hear::fd_check(loss_value, m.params.value(name), m.params.grad(name),
                       1e-5, 1e-3);
    INFO(name);
    CHECK(rep.max_rel < 1e-4);
  }
}

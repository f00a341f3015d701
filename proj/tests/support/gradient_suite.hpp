#pragma once

// Finite-difference checks for every differentiable operation, 64-bit mode.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tdet/alignment.hpp"
#include "tdet/backbone.hpp"
#include "tdet/ops.hpp"
#include "tdet/proposal_encoder.hpp"
#include "tdet/rpn.hpp"
#include "tdet/text_encoder.hpp"

namespace gradient_suite {

using tdet::Shape;
using tdet::Tensor64;
using Fn = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct Case {
  std::string name;
  // Builds one randomized trial: fills `inputs` and returns the scalar function.
  std::function<Fn(std::mt19937_64&, std::vector<Tensor64>&)> make;
};

struct Outcome {
  std::string name;
  double max_rel_error = 0;
  std::size_t trials = 0;
  std::size_t elements = 0;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts any output with fixed random weights so every output element's
// gradient path is exercised.
inline Fn weighted(std::function<Tensor64(const std::vector<Tensor64>&)> op, Shape out_shape,
                   std::mt19937_64& rng) {
  auto w = oracle::random_tensor(out_shape, rng).detached();
  return [op, w](const std::vector<Tensor64>& in) { return tdet::sum(tdet::mul(op(in), w)); };
}

inline std::vector<double> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> out(n);
  for (double& v : out) v = static_cast<double>(rng() % 2);
  return out;
}

inline std::vector<Case> cases() {
  using namespace tdet;
  std::vector<Case> out;

  out.push_back({"add/sub/mul", [](auto& rng, auto& in) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    in = {oracle::random_tensor(s, rng), oracle::random_tensor(s, rng)};
    return weighted([](auto& x) { return mul(add(x[0], x[1]), sub(x[0], scale(x[1], 0.5))); }, s, rng);
  }});
  out.push_back({"sum/mean", [](auto& rng, auto& in) {
    in = {oracle::random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng)};
    return Fn([](auto& x) { return add(scale(sum(mul(x[0], x[0])), 0.3), mean(x[0])); });
  }});
  out.push_back({"matmul/transpose", [](auto& rng, auto& in) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    in = {oracle::random_tensor({m, k}, rng), oracle::random_tensor({n, k}, rng)};
    return weighted([](auto& x) { return matmul(x[0], transpose(x[1])); }, {m, n}, rng);
  }});
  out.push_back({"linear", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 4), di = pick(rng, 1, 5), d_out = pick(rng, 1, 5);
    in = {oracle::random_tensor({n, di}, rng), oracle::random_tensor({di, d_out}, rng),
          oracle::random_tensor({d_out}, rng)};
    return weighted([](auto& x) { return linear(x[0], x[1], x[2]); }, {n, d_out}, rng);
  }});
  out.push_back({"conv2d", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0;
    const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
    in = {oracle::random_tensor({n, ci, h, w}, rng), oracle::random_tensor({co, ci, k, k}, rng),
          oracle::random_tensor({co}, rng)};
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    return weighted([stride, pad](auto& x) { return conv2d(x[0], x[1], x[2], stride, pad); }, {n, co, oh, ow}, rng);
  }});
  out.push_back({"relu", [](auto& rng, auto& in) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 6)};
    in = {oracle::random_tensor(s, rng)};
    return weighted([](auto& x) { return activation(x[0], Activation::relu); }, s, rng);
  }});
  out.push_back({"sigmoid", [](auto& rng, auto& in) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 6)};
    in = {oracle::random_tensor(s, rng, -4, 4)};
    return weighted([](auto& x) { return activation(x[0], Activation::sigmoid); }, s, rng);
  }});
  out.push_back({"softmax", [](auto& rng, auto& in) {
    const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
    in = {oracle::random_tensor(s, rng, -3, 3)};
    return weighted([](auto& x) { return activation(x[0], Activation::softmax_lastdim); }, s, rng);
  }});
  out.push_back({"layer_norm", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 2, 6);
    in = {oracle::random_tensor({n, d}, rng, -2, 2), oracle::random_tensor({d}, rng),
          oracle::random_tensor({d}, rng)};
    return weighted([](auto& x) { return layer_norm(x[0], x[1], x[2]); }, {n, d}, rng);
  }});
  out.push_back({"adaptive_max_pool2d", [](auto& rng, auto& in) {
    const std::size_t c = pick(rng, 1, 3), h = pick(rng, 1, 6), w = pick(rng, 1, 6);
    const std::size_t oh = pick(rng, 1, 3), ow = pick(rng, 1, 3);
    in = {oracle::distinct_tensor({c, h, w}, rng)};
    return weighted([oh, ow](auto& x) { return adaptive_max_pool2d(x[0], oh, ow); }, {c, oh, ow}, rng);
  }});
  out.push_back({"crop2d", [](auto& rng, auto& in) {
    const std::size_t c = pick(rng, 1, 3), h = pick(rng, 2, 6), w = pick(rng, 2, 6);
    const std::size_t y0 = pick(rng, 0, h - 1), x0 = pick(rng, 0, w - 1);
    const std::size_t y1 = pick(rng, y0 + 1, h), x1 = pick(rng, x0 + 1, w);
    in = {oracle::random_tensor({c, h, w}, rng)};
    return weighted([=](auto& x) { return crop2d(x[0], y0, y1, x0, x1); }, {c, y1 - y0, x1 - x0}, rng);
  }});
  out.push_back({"l2_normalize", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 1, 6);
    in = {oracle::random_tensor({n, d}, rng)};
    return weighted([](auto& x) { return l2_normalize(x[0]); }, {n, d}, rng);
  }});
  out.push_back({"select/concat/slice/stack", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 2, 5);
    in = {oracle::random_tensor({n, d}, rng), oracle::random_tensor({n, d}, rng)};
    std::vector<std::size_t> rows(pick(rng, 1, 5));
    for (auto& r : rows) r = pick(rng, 0, n - 1);
    const std::size_t start = pick(rng, 0, d - 1), len = pick(rng, 1, d - start);
    return weighted(
        [rows, start, len](auto& x) {
          auto cat = concat_cols(std::vector<Tensor64>{slice_cols(x[0], start, len), x[1]});
          auto picked = select_rows(cat, std::span<const std::size_t>(rows));
          return stack(std::vector<Tensor64>{picked, scale(picked, 2.0)});
        },
        {2, rows.size(), len + d}, rng);
  }});
  out.push_back({"binary_cross_entropy", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 8);
    in = {oracle::random_tensor({n}, rng, 0.05, 0.95)};
    const auto labels = random_labels(n, rng);
    return Fn([labels](auto& x) { return binary_cross_entropy(x[0], std::span<const double>(labels)); });
  }});
  out.push_back({"smooth_l1_loss", [](auto& rng, auto& in) {
    const std::size_t n = pick(rng, 1, 4);
    in = {oracle::random_tensor({n, 4}, rng, -3, 3)};
    std::vector<double> target(n * 4);
    std::uniform_real_distribution<double> d(-3, 3);
    for (std::size_t i = 0; i < target.size(); ++i) {
      // Keep the residual clear of the |x| = 1 seam.
      do target[i] = d(rng);
      while (std::abs(std::abs(in[0].values()[i] - target[i]) - 1.0) < 1e-2);
    }
    return Fn([target](auto& x) { return smooth_l1_loss(x[0], std::span<const double>(target)); });
  }});
  out.push_back({"attention", [](auto& rng, auto& in) {
    const std::size_t heads = pick(rng, 1, 2), d = heads * pick(rng, 1, 3), len = pick(rng, 2, 5);
    auto params = std::make_shared<AttentionParams<double>>(AttentionParams<double>::init(d, rng));
    in = {oracle::random_tensor({len, d}, rng), params->query.weight, params->key.weight,
          params->value.weight, params->output.weight, params->query.bias};
    std::vector<bool> padding(len, false);
    if (pick(rng, 0, 1)) padding[len - 1] = true;
    return weighted(
        [params, heads, padding](auto& x) {
          return multi_head_attention(x[0], *params, heads, &padding);
        },
        {len, d}, rng);
  }});
  out.push_back({"text_encoder", [](auto& rng, auto& in) {
    TextEncoderConfig cfg{4, 2, 1, 6, 8};
    auto enc = std::make_shared<TextEncoder<double>>(TextEncoder<double>::init(6, cfg, rng));
    ParameterList<double> params;
    enc->collect("t", params);
    for (auto& p : params) in.push_back(p.tensor);
    std::vector<std::size_t> ids{0};
    for (std::size_t i = pick(rng, 1, 4); i > 0; --i) ids.push_back(pick(rng, 3, 5));
    return weighted([enc, ids](auto&) { return enc->encode_ids(ids, nullptr); }, {1, 4}, rng);
  }});
  out.push_back({"proposal_encoder", [](auto& rng, auto& in) {
    ProposalEncoderConfig cfg{2, 3, 4};
    const std::size_t cf = pick(rng, 1, 3), p = pick(rng, 1, 3);
    auto enc = std::make_shared<ProposalEncoder<double>>(ProposalEncoder<double>::init(cf, cfg, rng));
    ParameterList<double> params;
    enc->collect("p", params);
    in = {oracle::random_tensor({p, cf, 2, 2}, rng)};
    // Positive biases keep the relus live; with every unit dead the
    // pre-normalization vector is exactly zero, where l2_normalize has a kink.
    std::uniform_real_distribution<double> bias(0.1, 0.5);
    for (auto& q : params) {
      if (!q.decay) {
        for (auto& v : q.tensor.values()) v = bias(rng);
      }
      in.push_back(q.tensor);
    }
    return weighted([enc](auto& x) { return enc->encode(x[0]); }, {p, 4}, rng);
  }});
  out.push_back({"alignment_head", [](auto& rng, auto& in) {
    AlignmentConfig cfg{5};
    const std::size_t dr = pick(rng, 2, 4), dt = pick(rng, 2, 4), p = pick(rng, 1, 4);
    auto head = std::make_shared<AlignmentHead<double>>(AlignmentHead<double>::init(dr, dt, cfg, rng));
    // Non-zero output layer so the check is not trivially at sigmoid(0).
    for (auto& v : head->fc2().weight.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    in = {oracle::random_tensor({p, dr}, rng), oracle::random_tensor({1, dt}, rng), head->fc1().weight,
          head->fc1().bias, head->fc2().weight, head->fc2().bias};
    return weighted([head](auto& x) { return head->forward(x[0], x[1]); }, {p}, rng);
  }});
  out.push_back({"align_loss", [](auto& rng, auto& in) {
    const std::size_t p = pick(rng, 1, 6);
    in = {oracle::random_tensor({p}, rng, -3, 3)};
    const auto labels = random_labels(p, rng);
    return Fn([labels](auto& x) { return align_loss(sigmoid(x[0]), std::span<const double>(labels)); });
  }});
  out.push_back({"rpn_loss", [](auto& rng, auto& in) {
    const std::size_t a = pick(rng, 2, 8);
    in = {oracle::random_tensor({a}, rng, -3, 3), oracle::random_tensor({a, 4}, rng, -2, 2)};
    std::vector<AnchorLabel> labels(a);
    std::vector<std::size_t> selected;
    std::uniform_real_distribution<double> d(-2, 2);
    for (std::size_t i = 0; i < a; ++i) {
      const auto kind = pick(rng, 0, 2);
      if (kind == 0) {
        labels[i].kind = AnchorLabelKind::negative;
      } else if (kind == 1) {
        labels[i] = {AnchorLabelKind::positive, 0, RegressionTarget{d(rng), d(rng), d(rng), d(rng)}};
      }
      if (kind != 2) selected.push_back(i);
    }
    if (selected.empty()) {
      labels[0] = {AnchorLabelKind::positive, 0, RegressionTarget{0.1, 0.2, 0.3, 0.4}};
      selected.push_back(0);
    }
    RpnLossConfig cfg;
    return Fn([labels, selected, cfg](auto& x) {
      RpnPrediction<double> pred{sigmoid(x[0]), x[1]};
      return rpn_loss(pred, std::span<const AnchorLabel>(labels), selected, cfg).total;
    });
  }});
  return out;
}

inline std::vector<Outcome> run(std::uint64_t seed, std::size_t trials = 20) {
  std::vector<Outcome> results;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases()) {
    Outcome o{c.name, 0, 0, 0};
    for (std::size_t t = 0; t < trials; ++t) {
      std::vector<Tensor64> inputs;
      auto f = c.make(rng, inputs);
      const auto r = oracle::gradcheck(f, inputs);
      o.max_rel_error = std::max(o.max_rel_error, r.max_rel_error);
      o.elements += r.checked;
      ++o.trials;
    }
    results.push_back(o);
  }
  return results;
}

}  // namespace gradient_suite

#include "mobkit/lora.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mobkit/assets.hpp"
#include "mobkit/errors.hpp"

namespace mobkit {
namespace {

constexpr double kSumTolerance = 1e-9;

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double relative_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return max_abs(got - want) / std::max(1e-300, max_abs(want));
}

// Dense reference built with explicit loops: (W0 + (alpha/r) W1 W2) X.
Eigen::MatrixXd dense_oracle(const LoraAdapter& a, const Eigen::MatrixXd& x) {
  const auto d = a.d(), k = a.k(), r = static_cast<Eigen::Index>(a.rank), n = x.cols();
  const double scale = a.alpha / static_cast<double>(a.rank);
  Eigen::MatrixXd w(d, k);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      double dw = 0.0;
      for (Eigen::Index p = 0; p < r; ++p) dw += a.w1(i, p) * a.w2(p, j);
      w(i, j) = a.w0(i, j) + scale * dw;
    }
  }
  Eigen::MatrixXd h(d, n);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index c = 0; c < n; ++c) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < k; ++j) s += w(i, j) * x(j, c);
      h(i, c) = s;
    }
  }
  return h;
}

double brute_force_nll(const std::vector<NllSample>& samples) {
  long double total = 0.0L;
  for (const auto& s : samples) {
    long double seq = 0.0L;
    for (std::size_t i = 0; i < s.targets.size(); ++i) seq -= std::log(static_cast<long double>(s.step_probs[i][s.targets[i]]));
    total += seq;
  }
  return static_cast<double>(total / static_cast<long double>(samples.size()));
}

std::vector<double> random_distribution(std::size_t vocab, Rng& rng) {
  std::vector<double> p(vocab);
  double sum = 0.0;
  for (auto& v : p) {
    v = 0.05 + rng.unit();
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

SelfTestCheck check(std::string name, bool passed, std::string detail) {
  return SelfTestCheck{std::move(name), passed, std::move(detail)};
}

}  // namespace

void LoraAdapter::validate() const {
  if (rank < 1 || rank >= std::min(d(), k())) {
    throw ShapeError(fmt::format("rank {} outside [1, min(d, k)) for d={}, k={}", rank, d(), k()));
  }
  if (w1.rows() != d() || w1.cols() != rank) {
    throw ShapeError(fmt::format("W1 is {}x{}, expected {}x{}", w1.rows(), w1.cols(), d(), rank));
  }
  if (w2.rows() != rank || w2.cols() != k()) {
    throw ShapeError(fmt::format("W2 is {}x{}, expected {}x{}", w2.rows(), w2.cols(), rank, k()));
  }
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = 2.0 * rng.unit() - 1.0;
  }
  return m;
}

LoraAdapter LoraAdapter::random(int d, int k, int rank, double alpha, Rng& rng) {
  LoraAdapter a;
  a.w0 = random_matrix(d, k, rng);
  a.w1 = random_matrix(d, rank, rng);
  a.w2 = random_matrix(rank, k, rng);
  a.alpha = alpha;
  a.rank = rank;
  a.validate();
  return a;
}

Eigen::MatrixXd lora_delta(const LoraAdapter& adapter, const Eigen::MatrixXd& x) {
  adapter.validate();
  if (x.rows() != adapter.k()) {
    throw ShapeError(fmt::format("input has {} rows, adapter expects k={}", x.rows(), adapter.k()));
  }
  const double scale = adapter.alpha / static_cast<double>(adapter.rank);
  Eigen::MatrixXd low = adapter.w2 * x;
  Eigen::MatrixXd up = adapter.w1 * low;
  return scale * up;
}

Eigen::MatrixXd lora_forward(const LoraAdapter& adapter, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd delta = lora_delta(adapter, x);
  Eigen::MatrixXd h = adapter.w0 * x;
  h += delta;
  return h;
}

ParamCount trainable_param_count(std::uint64_t d, std::uint64_t k, std::uint64_t r) {
  if (d == 0 || k == 0) throw ValidationError("matrix dimensions must be positive");
  if (r < 1 || r >= std::min(d, k)) {
    throw ValidationError(fmt::format("rank {} must satisfy 1 <= r < min(d, k) = {}", r, std::min(d, k)));
  }
  ParamCount c;
  c.lora = r * (d + k);
  c.full = d * k;
  c.ratio = static_cast<double>(c.full) / static_cast<double>(c.lora);
  return c;
}

NllResult token_nll(std::span<const NllSample> samples) {
  if (samples.empty()) throw ValidationError("token_nll needs at least one sample");
  NllResult result;
  double total = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& sample = samples[s];
    if (sample.step_probs.size() != sample.targets.size()) {
      throw ShapeError(fmt::format("sample {}: {} distributions for {} targets", s, sample.step_probs.size(),
                                   sample.targets.size()));
    }
    double seq = 0.0;
    for (std::size_t i = 0; i < sample.targets.size(); ++i) {
      const auto& p = sample.step_probs[i];
      double sum = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) throw ValidationError(fmt::format("sample {} step {}: negative probability", s, i));
        sum += v;
      }
      if (std::abs(sum - 1.0) > kSumTolerance) {
        throw ValidationError(fmt::format("sample {} step {}: distribution sums to {:.12f}", s, i, sum));
      }
      if (sample.targets[i] >= p.size()) {
        throw ValidationError(fmt::format("sample {} step {}: target {} outside vocabulary of {}", s, i,
                                          sample.targets[i], p.size()));
      }
      const double prob = p[sample.targets[i]];
      if (prob == 0.0) {
        result.infinite = true;
        continue;
      }
      seq -= std::log(prob);
    }
    total += seq;
  }
  result.loss = result.infinite ? std::numeric_limits<double>::infinity()
                                : total / static_cast<double>(samples.size());
  return result;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

double softmax_nll(const Eigen::MatrixXd& logits, std::span<const std::size_t> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ShapeError(fmt::format("{} logit rows for {} targets", logits.rows(), targets.size()));
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    if (t >= logits.cols()) throw ValidationError("target outside vocabulary");
    const double m = logits.row(i).maxCoeff();
    const double log_z = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += log_z - logits(i, t);
  }
  return loss;
}

Eigen::MatrixXd softmax_nll_gradient(const Eigen::MatrixXd& logits, std::span<const std::size_t> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ShapeError(fmt::format("{} logit rows for {} targets", logits.rows(), targets.size()));
  }
  Eigen::MatrixXd g = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    if (t >= logits.cols()) throw ValidationError("target outside vocabulary");
    g(i, t) -= 1.0;
  }
  return g;
}

std::vector<PeftPreset> presets_from_json(const json& j) {
  std::vector<PeftPreset> presets;
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported preset table version");
    for (const auto& row : j.at("presets")) {
      PeftPreset p{row.at("method").get<std::string>(), row.at("scaling_factor").get<double>(),
                   row.at("rank").get<int>()};
      if (p.rank < 1 || !(p.scaling_factor > 0.0)) throw ConfigError("invalid preset " + p.method);
      presets.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed preset table: ") + e.what());
  }
  return presets;
}

const std::vector<PeftPreset>& load_presets() {
  static const std::vector<PeftPreset> presets = presets_from_json(json::parse(embedded_asset("peft_presets.json")));
  return presets;
}

const PeftPreset& find_preset(std::string_view method) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  const auto wanted = lower(method);
  for (const auto& p : load_presets()) {
    if (lower(p.method) == wanted) return p;
  }
  throw ConfigError("unknown PEFT preset '" + std::string(method) + "'");
}

std::vector<SelfTestCheck> run_lora_self_test(std::uint64_t seed) {
  std::vector<SelfTestCheck> checks;
  Rng rng(seed);

  {
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int d = static_cast<int>(rng.between(2, 32));
      const int k = static_cast<int>(rng.between(2, 32));
      const int r = static_cast<int>(rng.between(1, std::min(d, k) - 1));
      const auto a = LoraAdapter::random(d, k, r, 0.5 + 63.5 * rng.unit(), rng);
      const auto x = random_matrix(k, rng.between(1, 8), rng);
      worst = std::max(worst, relative_error(lora_forward(a, x), dense_oracle(a, x)));
    }
    checks.push_back(check("dense equivalence (1000 adapters)", worst <= 1e-12,
                           fmt::format("max relative error {:.3e}", worst)));
  }
  {
    auto a = LoraAdapter::random(8, 8, 2, 16.0, rng);
    a.w1.setZero();
    const auto x = random_matrix(8, 5, rng);
    const Eigen::MatrixXd base = a.w0 * x;
    checks.push_back(check("zero adapter gives W0 X", lora_forward(a, x) == base, "bitwise comparison"));
  }
  {
    LoraAdapter a;
    const int d = 8, k = 8, r = 3;
    a.w0 = random_matrix(d, k, rng);
    a.w1 = Eigen::MatrixXd::Zero(d, r);
    a.w2 = Eigen::MatrixXd::Zero(r, k);
    for (int i = 0; i < r; ++i) a.w1(i, i) = a.w2(i, i) = 1.0;
    a.alpha = r;
    a.rank = r;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(k, 4);
    x.topRows(r) = random_matrix(r, 4, rng);
    const Eigen::MatrixXd expected = Eigen::MatrixXd(a.w0 * x) + x;
    checks.push_back(check("alpha = r with identity embedding adds X", lora_forward(a, x) == expected,
                           "bitwise comparison"));
  }
  {
    double worst = 0.0;
    bool scaling_exact = true;
    for (int trial = 0; trial < 200; ++trial) {
      const int d = static_cast<int>(rng.between(3, 32));
      const int k = static_cast<int>(rng.between(3, 32));
      const int r = static_cast<int>(rng.between(1, std::min(d, k) - 1));
      auto a = LoraAdapter::random(d, k, r, 1.0 + 63.0 * rng.unit(), rng);
      const auto x = random_matrix(k, 3, rng);
      const auto y = random_matrix(k, 3, rng);
      const Eigen::MatrixXd sum = x + y;
      worst = std::max(worst, max_abs(lora_forward(a, sum) - lora_forward(a, x) - lora_forward(a, y)));
      const Eigen::MatrixXd delta = lora_delta(a, x);
      a.alpha *= 2.0;
      scaling_exact = scaling_exact && lora_delta(a, x) == 2.0 * delta;
    }
    checks.push_back(check("linearity", worst <= 1e-10, fmt::format("max abs deviation {:.3e}", worst)));
    checks.push_back(check("doubling alpha doubles the update", scaling_exact, "bitwise comparison"));
  }
  {
    const auto small = trainable_param_count(8, 8, 2);
    const auto big = trainable_param_count(4096, 4096, 64);
    bool rejected = false;
    try {
      trainable_param_count(8, 8, 8);
    } catch (const ValidationError&) {
      rejected = true;
    }
    const bool ok = small.lora == 32 && small.full == 64 && small.ratio == 2.0 && big.lora == 524288 &&
                    big.full == 16777216 && big.ratio == 32.0 && rejected;
    checks.push_back(check("parameter counts", ok,
                           fmt::format("(8,8,2) -> ({}, {}, {}); (4096,4096,64) -> ({}, {}, {})", small.lora,
                                       small.full, small.ratio, big.lora, big.full, big.ratio)));
  }
  {
    std::vector<NllSample> onehot(1);
    for (std::size_t t : {2u, 0u, 1u}) {
      std::vector<double> p(4, 0.0);
      p[t] = 1.0;
      onehot[0].step_probs.push_back(p);
      onehot[0].targets.push_back(t);
    }
    std::vector<NllSample> uniform(1);
    for (int i = 0; i < 3; ++i) {
      uniform[0].step_probs.push_back(std::vector<double>(4, 0.25));
      uniform[0].targets.push_back(static_cast<std::size_t>(i));
    }
    const double closed = 3.0 * std::log(4.0);
    const auto u = token_nll(uniform);
    checks.push_back(check("one-hot distributions give zero loss", token_nll(onehot).loss == 0.0, ""));
    checks.push_back(check("uniform V=4, length 3 gives 3 ln 4", std::abs(u.loss - closed) <= 1e-12 * closed,
                           fmt::format("{:.15f} vs {:.15f}", u.loss, closed)));
  }
  {
    Rng nll_rng(5);
    std::vector<NllSample> samples(6);
    for (auto& s : samples) {
      const auto len = static_cast<std::size_t>(nll_rng.between(1, 10));
      const auto vocab = static_cast<std::size_t>(nll_rng.between(2, 12));
      for (std::size_t i = 0; i < len; ++i) {
        s.step_probs.push_back(random_distribution(vocab, nll_rng));
        s.targets.push_back(static_cast<std::size_t>(nll_rng.below(vocab)));
      }
    }
    const double got = token_nll(samples).loss;
    const double want = brute_force_nll(samples);
    checks.push_back(check("random table matches summation oracle", std::abs(got - want) <= 1e-12 * std::abs(want),
                           fmt::format("{:.15f} vs {:.15f}", got, want)));
    samples[0].step_probs[0].assign(samples[0].step_probs[0].size(), 0.0);
    samples[0].step_probs[0][(samples[0].targets[0] + 1) % samples[0].step_probs[0].size()] = 1.0;
    const auto inf = token_nll(samples);
    checks.push_back(check("zero target probability flags infinite loss", inf.infinite && std::isinf(inf.loss), ""));
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto steps = rng.between(1, 5);
      const auto vocab = rng.between(2, 8);
      Eigen::MatrixXd logits = 3.0 * random_matrix(steps, vocab, rng);
      std::vector<std::size_t> targets;
      for (Eigen::Index i = 0; i < steps; ++i) targets.push_back(static_cast<std::size_t>(rng.below(vocab)));
      const auto g = softmax_nll_gradient(logits, targets);
      Eigen::MatrixXd fd(steps, vocab);
      const double eps = 1e-5;
      for (Eigen::Index i = 0; i < steps; ++i) {
        for (Eigen::Index j = 0; j < vocab; ++j) {
          Eigen::MatrixXd plus = logits, minus = logits;
          plus(i, j) += eps;
          minus(i, j) -= eps;
          fd(i, j) = (softmax_nll(plus, targets) - softmax_nll(minus, targets)) / (2.0 * eps);
        }
      }
      worst = std::max(worst, relative_error(g, fd));
    }
    checks.push_back(check("logit gradient matches central differences", worst <= 1e-6,
                           fmt::format("max relative error {:.3e}", worst)));
  }
  {
    struct Expected {
      const char* method;
      double scaling;
      int rank;
    };
    const Expected expected[] = {{"LoRA", 64, 64},  {"OLoRA", 16, 64},  {"EVA", 1, 16},   {"PiSSA", 64, 64},
                                 {"LoftQ", 16, 64}, {"LoRA+", 8, 32},   {"rsLoRA", 8, 32}, {"QLoRA", 8, 32}};
    const auto& presets = load_presets();
    bool ok = presets.size() == std::size(expected);
    for (std::size_t i = 0; ok && i < presets.size(); ++i) {
      ok = presets[i].method == expected[i].method && presets[i].scaling_factor == expected[i].scaling &&
           presets[i].rank == expected[i].rank;
    }
    checks.push_back(check("preset table", ok, fmt::format("{} presets", presets.size())));
  }
  return checks;
}

}  // namespace mobkit

// Copyright 2026 The dpsparse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpsparse/accountant.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "absl/status/status.h"
#include "absl/strings/str_cat.h"

namespace dpsparse {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double LogAdd(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log(exp(a) - exp(b)) for a >= b.
double LogSub(double a, double b) {
  if (b == -kInf) return a;
  if (a <= b) return -kInf;
  return a + std::log(-std::expm1(b - a));
}

double LogErfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  // Asymptotic expansion; relative error below 1e-12 for x >= 25.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) -
                        15.0 / (8.0 * x2 * x2 * x2);
  return -x2 - std::log(x) - 0.5 * std::log(std::numbers::pi) +
         std::log(series);
}

bool IsInteger(double alpha) {
  return std::fabs(alpha - std::round(alpha)) < 1e-12;
}

double LogBinomial(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log A_alpha for integer alpha.
double LogAInteger(double q, double sigma, int alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  double log_a = -kInf;
  for (int k = 0; k <= alpha; ++k) {
    const double term = LogBinomial(alpha, k) + k * log_q +
                        (alpha - k) * log_1mq +
                        (static_cast<double>(k) * k - k) * inv_two_var;
    log_a = LogAdd(log_a, term);
  }
  return log_a;
}

// log A_alpha for fractional alpha: the integral is split at z0 where the
// two mixture components cross, and each half expanded as a binomial series
// whose terms are Gaussian tail masses.
double LogAFractional(double q, double sigma, double alpha) {
  double log_a0 = -kInf;
  double log_a1 = -kInf;
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double sqrt2_sigma = std::sqrt(2.0) * sigma;
  double log_abs_coef = 0.0;  // log |C(alpha, i)|
  bool coef_positive = true;
  for (int i = 0; i < 100000; ++i) {
    if (i > 0) {
      const double factor = (alpha - i + 1.0) / i;
      log_abs_coef += std::log(std::fabs(factor));
      if (factor < 0) coef_positive = !coef_positive;
    }
    const double j = alpha - i;
    const double log_t0 = log_abs_coef + i * log_q + j * log_1mq;
    const double log_t1 = log_abs_coef + j * log_q + i * log_1mq;
    const double log_e0 = std::log(0.5) + LogErfc((i - z0) / sqrt2_sigma);
    const double log_e1 = std::log(0.5) + LogErfc((z0 - j) / sqrt2_sigma);
    const double log_s0 =
        log_t0 + (static_cast<double>(i) * i - i) / (2 * sigma * sigma) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2 * sigma * sigma) + log_e1;
    if (coef_positive) {
      log_a0 = LogAdd(log_a0, log_s0);
      log_a1 = LogAdd(log_a1, log_s1);
    } else {
      log_a0 = LogSub(log_a0, log_s0);
      log_a1 = LogSub(log_a1, log_s1);
    }
    if (i > 2 && std::max(log_s0, log_s1) < -30.0) break;
  }
  return LogAdd(log_a0, log_a1);
}

}  // namespace

void PrivacyLedger::Record(double sample_rate, double noise_multiplier,
                           uint64_t count) {
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    throw std::invalid_argument("sample rate must lie in (0, 1]");
  }
  if (!(noise_multiplier >= 0.0) || std::isinf(noise_multiplier)) {
    throw std::invalid_argument("noise multiplier must be finite and >= 0");
  }
  if (count == 0) throw std::invalid_argument("event count must be >= 1");
  total_steps_ += count;
  if (!events_.empty() && events_.back().sample_rate == sample_rate &&
      events_.back().noise_multiplier == noise_multiplier) {
    events_.back().count += count;
    return;
  }
  events_.push_back({sample_rate, noise_multiplier, count});
}

void PrivacyLedger::Append(const PrivacyLedger& other) {
  for (const SgmEvent& e : other.events_) {
    Record(e.sample_rate, e.noise_multiplier, e.count);
  }
}

std::vector<double> DefaultAlphaGrid() {
  std::vector<double> alphas = {1.25, 1.5, 1.75};
  for (int a = 2; a <= 256; ++a) alphas.push_back(a);
  return alphas;
}

absl::StatusOr<double> RdpOfSgm(double sample_rate, double noise_multiplier,
                                double alpha) {
  if (!(alpha > 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("RDP order must exceed 1, got ", alpha));
  }
  if (!(sample_rate >= 0.0 && sample_rate <= 1.0)) {
    return absl::InvalidArgumentError("sample rate must lie in [0, 1]");
  }
  if (!(noise_multiplier >= 0.0)) {
    return absl::InvalidArgumentError("noise multiplier must be >= 0");
  }
  if (sample_rate == 0.0) return 0.0;
  if (noise_multiplier == 0.0) return kInf;
  if (sample_rate == 1.0) {
    return alpha / (2.0 * noise_multiplier * noise_multiplier);
  }
  const double log_a =
      IsInteger(alpha)
          ? LogAInteger(sample_rate, noise_multiplier,
                        static_cast<int>(std::round(alpha)))
          : LogAFractional(sample_rate, noise_multiplier, alpha);
  return std::max(0.0, log_a / (alpha - 1.0));
}

double RdpToEpsilon(double rdp, double alpha, double delta) {
  return rdp + std::log((alpha - 1.0) / alpha) -
         (std::log(delta) + std::log(alpha)) / (alpha - 1.0);
}

absl::StatusOr<EpsilonReport> ComputeEpsilon(const PrivacyLedger& ledger,
                                             double delta,
                                             const AccountantOptions& options) {
  if (!(delta > 0.0 && delta < 1.0)) {
    return absl::InvalidArgumentError("delta must lie in (0, 1)");
  }
  if (ledger.empty()) return EpsilonReport{0.0, 0.0};
  if (options.alphas.empty()) {
    return absl::InvalidArgumentError("alpha grid is empty");
  }
  EpsilonReport best{kInf, 0.0};
  for (double alpha : options.alphas) {
    double total = 0.0;
    for (const SgmEvent& e : ledger.events()) {
      absl::StatusOr<double> rdp =
          RdpOfSgm(e.sample_rate, e.noise_multiplier, alpha);
      if (!rdp.ok()) return rdp.status();
      total += static_cast<double>(e.count) * *rdp;
    }
    const double eps = RdpToEpsilon(total, alpha, delta);
    if (eps < best.epsilon) best = {eps, alpha};
  }
  best.epsilon = std::max(0.0, best.epsilon);
  return best;
}

absl::StatusOr<double> Epsilon(const PrivacyLedger& ledger, double delta,
                               const AccountantOptions& options) {
  absl::StatusOr<EpsilonReport> r = ComputeEpsilon(ledger, delta, options);
  if (!r.ok()) return r.status();
  return r->epsilon;
}

absl::StatusOr<double> CalibrateNoise(
    const std::function<PrivacyLedger(double)>& ledger_for_sigma,
    double target_epsilon, double delta, const CalibrationOptions& options) {
  if (!(target_epsilon > 0.0)) {
    return absl::InvalidArgumentError("target epsilon must be > 0");
  }
  auto eps_at = [&](double sigma) {
    return Epsilon(ledger_for_sigma(sigma), delta, options.accountant);
  };
  double lo = options.sigma_min;
  double hi = options.sigma_max;
  absl::StatusOr<double> eps_lo = eps_at(lo);
  if (!eps_lo.ok()) return eps_lo.status();
  if (*eps_lo <= target_epsilon) return lo;
  absl::StatusOr<double> eps_hi = eps_at(hi);
  if (!eps_hi.ok()) return eps_hi.status();
  if (*eps_hi > target_epsilon) {
    return absl::FailedPreconditionError(absl::StrCat(
        "target epsilon ", target_epsilon, " unattainable: sigma_max ", hi,
        " still gives epsilon ", *eps_hi));
  }
  // Invariant: eps(lo) > target >= eps(hi).
  while (lo < hi * (1.0 - options.tolerance)) {
    const double mid = std::sqrt(lo * hi);
    absl::StatusOr<double> eps_mid = eps_at(mid);
    if (!eps_mid.ok()) return eps_mid.status();
    if (*eps_mid > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

absl::StatusOr<double> CalibrateSigma(double sample_rate, uint64_t total_steps,
                                      double target_epsilon, double delta,
                                      const CalibrationOptions& options) {
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    return absl::InvalidArgumentError("sample rate must lie in (0, 1]");
  }
  if (total_steps == 0) {
    return absl::InvalidArgumentError("total_steps must be >= 1");
  }
  return CalibrateNoise(
      [&](double sigma) {
        PrivacyLedger ledger;
        ledger.Record(sample_rate, sigma, total_steps);
        return ledger;
      },
      target_epsilon, delta, options);
}

nlohmann::json LedgerToJson(const PrivacyLedger& ledger, double delta,
                            const AccountantOptions& options) {
  nlohmann::json events = nlohmann::json::array();
  for (const SgmEvent& e : ledger.events()) {
    events.push_back({{"sample_rate", e.sample_rate},
                      {"noise_multiplier", e.noise_multiplier},
                      {"count", e.count}});
  }
  nlohmann::json j;
  j["delta"] = delta;
  j["total_steps"] = ledger.total_steps();
  j["events"] = std::move(events);
  absl::StatusOr<EpsilonReport> eps = ComputeEpsilon(ledger, delta, options);
  if (eps.ok() && std::isfinite(eps->epsilon)) {
    j["epsilon"] = eps->epsilon;
    j["best_alpha"] = eps->best_alpha;
  } else {
    // JSON has no infinity; a null epsilon means "no finite guarantee".
    j["epsilon"] = nullptr;
    j["best_alpha"] = nullptr;
  }
  return j;
}

absl::StatusOr<PrivacyLedger> LedgerFromJson(const nlohmann::json& j) {
  PrivacyLedger ledger;
  if (!j.contains("events") || !j["events"].is_array()) {
    return absl::InvalidArgumentError("ledger JSON lacks an events array");
  }
  try {
    for (const auto& e : j["events"]) {
      ledger.Record(e.at("sample_rate").get<double>(),
                    e.at("noise_multiplier").get<double>(),
                    e.at("count").get<uint64_t>());
    }
  } catch (const std::exception& ex) {
    return absl::InvalidArgumentError(
        absl::StrCat("malformed ledger event: ", ex.what()));
  }
  return ledger;
}

}  // namespace dpsparse

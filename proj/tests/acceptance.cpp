// Acceptance suite: one PASS/FAIL line per primary criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/model.hpp"
#include "disco/privacy.hpp"
#include "disco/rng.hpp"
#include "disco/simharness.hpp"

using namespace disco;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(DISCO_SOURCE_DIR) / "scenarios";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- Federated MNIST training curve -------------------------------------

Outcome federated_mnist() {
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = load_scenario(kScenarios / "mnist-federated.json");
  const auto [parts, test] = materialize_datasets(s);
  bool sizes = parts.size() == 3;
  for (const Dataset& d : parts) sizes = sizes && d.size() == 2000;
  const RunOutput out = run_scenario_full(s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // Independent evaluation of the final global params on the held-out set.
  const double acc = evaluate(out.final_params, test).accuracy;
  bool markers = out.report.aggregations.size() == 10;
  for (std::size_t i = 0; i < out.report.global_evals.size(); ++i) {
    markers = markers && out.report.global_evals[i].epoch == 2 * i + 1;
  }
  const bool pass = sizes && s.task.model == ModelSpec{784, 32, 10, s.task.model.seed} &&
                    s.task.total_epochs() == 20 && markers && acc >= 0.85 && secs < 300.0;
  return {pass, fmt("3x2000 samples %s, %zu aggregation events, every 2 epochs %s, test accuracy %.4f (>= 0.85), "
                    "runtime %.1f s (< 300 s)",
                    sizes ? "yes" : "no", out.report.aggregations.size(), markers ? "yes" : "no", acc, secs)};
}

// ---- Secure vs plain aggregation -----------------------------------------

Outcome secure_equivalence() {
  const FixedPointCodec codec{20};
  std::size_t trials = 0, failures = 0;
  double worst_ratio = 0.0;
  for (std::size_t k : {2u, 3u, 5u, 8u}) {
    const double tol = static_cast<double>(k) * std::ldexp(1.0, -20);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      for (Weighting w : {Weighting::kSampleCount, Weighting::kUniform}) {
        CounterRng rng(derive_key(0xACCE55, {k, seed}));
        const std::size_t dim = 64;
        std::vector<LayerShape> manifest{{"out.bias", {dim}}};
        std::vector<ClientId> ids;
        for (std::size_t i = 0; i < k; ++i) ids.push_back(i + 1);
        std::vector<Contribution> plain;
        ShareMatrix m;
        m.participants = ids;
        std::map<ClientId, std::uint64_t> counts;
        for (ClientId id : ids) {
          Contribution c;
          c.client_id = id;
          c.payload.manifest = manifest;
          c.payload.values.resize(dim);
          for (double& x : c.payload.values) x = rng.next_normal() * 0.5;
          c.sample_count = 1 + rng.next_below(2000);
          counts[id] = *c.sample_count;
          for (auto& [to, sh] : split_secure_update(c.payload, *c.sample_count, w, codec, ids, id, 0, seed)) {
            m.put(id, to, sh.values);
          }
          plain.push_back(std::move(c));
        }
        SecureAggregateOptions opts;
        opts.weighting = w;
        opts.codec = codec;
        opts.manifest = manifest;
        const auto sec = secure_aggregate(m, counts, opts).global_update;
        const auto ref = fedavg(plain, w).global_update;
        double worst = 0.0;
        for (std::size_t i = 0; i < dim; ++i) worst = std::max(worst, std::abs(sec.values[i] - ref.values[i]));
        worst_ratio = std::max(worst_ratio, worst / tol);
        ++trials;
        if (worst > tol) ++failures;
      }
    }
  }
  return {failures == 0, fmt("%zu trials (k in {2,3,5,8} x 50 seeds x 2 weightings), %zu failures, "
                             "worst error %.3g of the k*2^-20 bound",
                             trials, failures, worst_ratio)};
}

// ---- Decentralized vs federated -------------------------------------------

Outcome cross_scheme() {
  Scenario dec = load_scenario(kScenarios / "decentralized-plain.json");
  dec.task.weighting = Weighting::kUniform;
  Scenario fed = dec;
  fed.task.scheme = TrainingScheme::kFederated;
  fed.task.task_id += "-federated";
  const RunOutput a = run_scenario_full(fed);
  const RunOutput b = run_scenario_full(dec);
  double worst = 0.0;
  const bool same_shape = a.final_params.same_shape(b.final_params);
  if (same_shape) {
    for (std::size_t i = 0; i < a.final_params.size(); ++i) {
      worst = std::max(worst, std::abs(a.final_params.values[i] - b.final_params.values[i]));
    }
  }
  // Every decentralized peer must hold the same params, not just the evaluated one.
  double spread = 0.0;
  for (const auto& [id, p] : b.client_params) {
    for (std::size_t i = 0; i < p.size(); ++i) spread = std::max(spread, std::abs(p.values[i] - b.final_params.values[i]));
  }
  const bool pass = same_shape && a.report.finished && b.report.finished && worst <= 1e-12 && spread <= 1e-12;
  return {pass, fmt("%llu rounds x %zu clients, max |federated - decentralized| = %.3g, peer spread %.3g (<= 1e-12)",
                    static_cast<unsigned long long>(dec.task.total_rounds), dec.num_clients, worst, spread)};
}

// ---- Privacy boundary ------------------------------------------------------

Outcome privacy_boundary() {
  // Every feature value is a distinctive sentinel; none may leave a node.
  Dataset corpus, test;
  corpus.num_features = 4;
  corpus.num_classes = 2;
  std::vector<double> sentinels;
  CounterRng rng(0x5E27);
  for (std::size_t r = 0; r < 90; ++r) {
    const std::uint32_t y = static_cast<std::uint32_t>(r % 2);
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = 0.2 + 0.6 * y + 0.1 * rng.next_unit() + 1e-9 * static_cast<double>(r * 4 + c + 1);
      corpus.features.push_back(v);
      sentinels.push_back(v);
    }
    corpus.labels.push_back(y);
  }
  test = corpus;

  std::size_t frames = 0, leaks = 0, coord_payloads = 0, sessions = 0;
  std::uint64_t reported_payloads = 0;
  const auto scan_text = [&](std::span<const std::uint8_t> bytes) {
    const std::string_view s(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    for (double v : sentinels) {
      for (const char* f : {"%.17g", "%.15g", "%.9g"}) {
        char buf[40];
        std::snprintf(buf, sizeof buf, f, v);
        if (s.find(buf) != std::string_view::npos) ++leaks;
      }
      std::uint8_t raw[8];
      std::memcpy(raw, &v, 8);
      if (s.find(std::string_view(reinterpret_cast<const char*>(raw), 8)) != std::string_view::npos) ++leaks;
    }
  };
  const auto scan_params = [&](const ParamVector& p) {
    for (double x : p.values) {
      if (std::find(sentinels.begin(), sentinels.end(), x) != sentinels.end()) ++leaks;
    }
  };

  for (TrainingScheme scheme : {TrainingScheme::kFederated, TrainingScheme::kDecentralized}) {
    for (bool secure : {false, true}) {
      if (secure && scheme == TrainingScheme::kFederated) continue;
      Scenario s;
      s.task.task_id = "sentinel";
      s.task.model = {4, 6, 2, 3};
      s.task.train = {16, 2, 0.2, 9};
      s.task.scheme = scheme;
      s.task.secure_aggregation = secure;
      s.task.min_participants = 3;
      s.task.ready_threshold = 3;
      s.task.total_rounds = 4;
      s.num_clients = 3;
      s.dataset.kind = DatasetSource::Kind::kInline;
      s.dataset.inline_train = corpus;
      s.dataset.inline_test = test;
      s.seed = 5;
      RunOptions opts;
      const bool decentralized = scheme == TrainingScheme::kDecentralized;
      opts.frame_observer = [&](const FrameRecord& f) {
        ++frames;
        scan_text(f.bytes);
        const wire::Message& m = *f.msg;
        if (decentralized && (f.from == "coordinator" || f.to == "coordinator") && wire::carries_model_payload(m)) {
          ++coord_payloads;
        }
        if (const auto* u = std::get_if<wire::UpdateUpload>(&m.body)) scan_params(u->payload);
        if (const auto* u = std::get_if<wire::PeerUpdate>(&m.body)) scan_params(u->params);
        if (const auto* u = std::get_if<wire::GlobalUpdate>(&m.body)) scan_params(u->params);
        if (const auto* u = std::get_if<wire::RoundStart>(&m.body); u && u->global_params) scan_params(*u->global_params);
      };
      const RunOutput out = run_scenario_full(s, opts);
      if (decentralized) reported_payloads += out.report.coordinator_model_payloads;
      if (out.report.finished) ++sessions;
    }
  }
  const bool pass = sessions == 3 && frames > 0 && leaks == 0 && coord_payloads == 0 && reported_payloads == 0;
  return {pass, fmt("%zu/3 sessions finished (federated, decentralized plain, decentralized secure), %zu frames "
                    "scanned, %zu sentinel hits, %zu coordinator payload frames in decentralized sessions",
                    sessions, frames, leaks, coord_payloads)};
}

// ---- DP mechanics ----------------------------------------------------------

Outcome dp_mechanics() {
  // Clipping bound over 10^3 random updates of varied scale and radius.
  std::size_t clip_violations = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    CounterRng rng(derive_key(0xC11, {i}));
    ParamVector u;
    const std::size_t n = 1 + rng.next_below(300);
    u.manifest = {{"out.bias", {n}}};
    u.values.resize(n);
    const double scale = std::exp(rng.next_uniform(-4, 4));
    for (double& x : u.values) x = rng.next_normal() * scale;
    const double radius = std::exp(rng.next_uniform(-3, 3));
    if (l2_norm(clip_update(u, radius).values) > radius * (1 + 1e-12)) ++clip_violations;
  }

  // Empirical noise std at 10^5 samples.
  const PrivacyConfig cfg{1.5, 0.2, 4242};
  ParamVector zero;
  zero.manifest = {{"out.bias", {100'000}}};
  zero.values.assign(100'000, 0.0);
  const ParamVector noisy = add_noise(zero, cfg);
  double sum = 0.0, sq = 0.0;
  for (double x : noisy.values) sum += x, sq += x * x;
  const double mean = sum / 1e5;
  const double sd = std::sqrt(sq / 1e5 - mean * mean);
  const double target = cfg.noise_scale * cfg.clip_radius;
  const double rel = std::abs(sd - target) / target;

  // noiseScale = 0, clipRadius = 0 against a run with no privacy block at all.
  Scenario base = load_scenario(kScenarios / "smoke-2client.json");
  base.task.privacy = PrivacyConfig{};
  Scenario zeroed = base;
  zeroed.task.privacy = PrivacyConfig{0.0, 0.0, 987654321};
  const RunOutput a = run_scenario_full(base);
  const RunOutput b = run_scenario_full(zeroed);
  const bool bitwise = a.final_params == b.final_params && a.client_params == b.client_params &&
                       a.report.final_params_digest == b.report.final_params_digest;

  const bool pass = clip_violations == 0 && rel <= 0.05 && bitwise;
  return {pass, fmt("clip violations %zu/1000, noise std %.5f vs %.5f (rel err %.2f%%, <= 5%%), "
                    "zero-privacy run bitwise equal: %s",
                    clip_violations, sd, target, 100 * rel, bitwise ? "yes" : "no")};
}

// ---- Churn -----------------------------------------------------------------

Outcome churn() {
  const Scenario drop = load_scenario(kScenarios / "churn-dropout.json");
  const ExperimentReport a = run_scenario(drop);
  bool two_after = true;
  for (const auto& ev : a.aggregations) {
    const std::size_t want = ev.round < drop.faults.front().round.value_or(0) ? 3 : 2;
    two_after = two_after && ev.participants.size() == want;
  }
  const bool survived = a.finished && a.completed_rounds == a.total_rounds && drop.task.min_participants == 2 &&
                        drop.num_clients == 3 && two_after;

  const ExperimentReport b = run_scenario(load_scenario(kScenarios / "churn-pause-rejoin.json"));
  TimeMs paused_at = -1, resumed_at = -1, rejoin_at = -1;
  for (const auto& t : b.timeline) {
    if (t.kind == "paused" && paused_at < 0) paused_at = t.at_ms;
    if (t.kind == "fault" && t.detail.find("rejoin") != std::string::npos && rejoin_at < 0) rejoin_at = t.at_ms;
    if (t.kind == "resumed" && paused_at >= 0 && resumed_at < 0) resumed_at = t.at_ms;
  }
  const auto paused_msgs = b.message_counts.count("SessionPaused") ? b.message_counts.at("SessionPaused") : 0;
  const bool gated = paused_msgs > 0 && paused_at >= 0 && rejoin_at >= paused_at && resumed_at >= rejoin_at &&
                     b.finished && b.completed_rounds == b.total_rounds;
  return {survived && gated,
          fmt("1-of-3 dropout (min 2): %llu/%llu rounds, later rounds with 2 participants: %s; below threshold: "
              "%llu SessionPaused, paused at %lld ms, rejoin at %lld ms, resumed at %lld ms, %llu/%llu rounds",
              static_cast<unsigned long long>(a.completed_rounds), static_cast<unsigned long long>(a.total_rounds),
              two_after ? "yes" : "no", static_cast<unsigned long long>(paused_msgs),
              static_cast<long long>(paused_at), static_cast<long long>(rejoin_at), static_cast<long long>(resumed_at),
              static_cast<unsigned long long>(b.completed_rounds), static_cast<unsigned long long>(b.total_rounds))};
}

// ---- Gradient correctness --------------------------------------------------

// Mean cross-entropy computed directly from the documented layer layout.
double oracle_loss(const ParamVector& p, const Dataset& d, std::size_t hidden, std::size_t out) {
  const std::size_t in = d.num_features;
  const double* v = p.values.data();
  double total = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    const auto x = d.row(r);
    std::vector<double> h(x.begin(), x.end());
    std::size_t off = 0;
    if (hidden > 0) {
      h.assign(hidden, 0.0);
      for (std::size_t j = 0; j < hidden; ++j) {
        double s = v[in * hidden + j];
        for (std::size_t i = 0; i < in; ++i) s += x[i] * v[i * hidden + j];
        h[j] = std::max(0.0, s);
      }
      off = in * hidden + hidden;
    }
    std::vector<double> z(out);
    for (std::size_t k = 0; k < out; ++k) {
      double s = v[off + h.size() * out + k];
      for (std::size_t j = 0; j < h.size(); ++j) s += h[j] * v[off + j * out + k];
      z[k] = s;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double se = 0.0;
    for (double zk : z) se += std::exp(zk - m);
    total += m + std::log(se) - z[d.labels[r]];
  }
  return total / static_cast<double>(d.size());
}

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    CounterRng rng(derive_key(0x6AD, {draw}));
    const std::size_t in = 2 + rng.next_below(6), hidden = draw % 4 == 3 ? 0 : 2 + rng.next_below(8),
                      out = 2 + rng.next_below(4);
    SyntheticSpec ss{12 + rng.next_below(20), in, out, 0.3, draw};
    const Dataset d = synthetic_blobs(ss);
    ParamVector p = zero_params({in, hidden, out, 0});
    for (double& x : p.values) x = rng.next_uniform(-1, 1);
    const ParamVector g = backward(p, d.view());
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector a = p, b = p;
      const double h = 1e-6;
      a.values[i] += h;
      b.values[i] -= h;
      const double fd = (oracle_loss(a, d, hidden, out) - oracle_loss(b, d, hidden, out)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g.values[i]) / denom);
      ++coords;
    }
  }
  return {worst <= 1e-4, fmt("20 random draws, %zu coordinates, worst relative error %.3g (<= 1e-4)", coords, worst)};
}

// ---- Determinism -----------------------------------------------------------

Outcome determinism() {
  std::size_t scenarios = 0, identical = 0;
  std::string bad;
  for (const auto& entry : std::filesystem::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".json") continue;
    ++scenarios;
    const Scenario s = load_scenario(entry.path());
    const ExperimentReport a = run_scenario(s), b = run_scenario(s);
    if (to_json(a).dump(2) == to_json(b).dump(2) && report_csv(a) == report_csv(b)) ++identical;
    else bad += " " + entry.path().filename().string();
  }
  return {scenarios > 0 && identical == scenarios,
          fmt("%zu/%zu bundled scenarios replay to byte-identical JSON and CSV reports%s", identical, scenarios,
              bad.c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"federated-mnist-curve", federated_mnist},
      {"secure-plain-equivalence", secure_equivalence},
      {"decentralized-federated-equivalence", cross_scheme},
      {"privacy-boundary", privacy_boundary},
      {"dp-mechanics", dp_mechanics},
      {"churn", churn},
      {"gradient-correctness", gradient_check},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

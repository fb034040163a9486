// Acceptance suite: one PASS/FAIL line per criterion.
//
//   sarl_acceptance --tests <path to sarl_tests> [--report out.json] [--only 1,2,8]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oracles.hpp"
#include "sarl/dti.hpp"
#include "sarl/errors.hpp"
#include "sarl/io.hpp"
#include "sarl/phantom.hpp"
#include "sarl/sampling.hpp"
#include "sarl/sh.hpp"
#include "sarl/train.hpp"
#include "sarl/wavelet.hpp"

using namespace sarl;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Sub-checks of one criterion.
class Criterion {
 public:
  explicit Criterion(json& log) : log_(log) {}

  void check(const std::string& what, bool ok, double value = std::nan(""), double limit = std::nan("")) {
    json e = {{"check", what}, {"pass", ok}};
    if (!std::isnan(value)) e["value"] = value;
    if (!std::isnan(limit)) e["limit"] = limit;
    log_["checks"].push_back(e);
    if (!ok) {
      failed_ = true;
      std::printf("    fail: %s", what.c_str());
      if (!std::isnan(value)) std::printf(" (value %.6g", value);
      if (!std::isnan(limit)) std::printf(", limit %.6g", limit);
      if (!std::isnan(value)) std::printf(")");
      std::printf("\n");
    }
  }
  // value < limit
  void below(const std::string& what, double value, double limit) {
    check(what, value < limit, value, limit);
  }
  void note(const std::string& key, const json& v) { log_[key] = v; }
  bool passed() const { return !failed_; }

 private:
  json& log_;
  bool failed_ = false;
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Runs the unit-test binary restricted by a doctest filter.
bool run_unit_tests(const std::string& binary, const std::string& filter) {
  const std::string cmd = "\"" + binary + "\" " + filter + " --no-intro=true --minimal=true";
  std::fflush(stdout);
  return std::system(cmd.c_str()) == 0;
}

// ---------------------------------------------------------------------------

void sh_round_trip(Criterion& c) {
  const GradientTable table = phantom::repulsion_table(90, 1000.0, 0, 0);
  const auto t0 = Clock::now();  // the table build is setup, not part of the round trip
  const auto basis = sh::eval_basis(table.dirs());
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = oracle::random_vector(sh::kNumCoeffs, seed, -1.0, 1.0);
    const Eigen::VectorXd coeffs = Eigen::Map<const Eigen::VectorXd>(r.data(), r.size());
    const Eigen::VectorXd back = sh::fit(sh::synth(coeffs, basis), basis, 0.0);
    worst = std::max(worst, (back - coeffs).cwiseAbs().maxCoeff());
  }
  c.below("max abs coefficient error", worst, 1e-8);
  c.below("runtime seconds", seconds_since(t0), 1.0);
}

void sh_constant(Criterion& c) {
  c.check("28 basis functions at order 6", sh::num_coeffs(6) == 28 && sh::kNumCoeffs == 28);
  const GradientTable table = phantom::repulsion_table(90, 1000.0, 0, 0);
  const auto basis = sh::eval_basis(table.dirs());
  c.check("basis matrix has 28 columns", basis.cols() == 28);
  const Eigen::VectorXd coeffs = sh::fit(Eigen::VectorXd::Ones(90), basis, 0.0);
  c.below("|c00 - sqrt(4 pi)|", std::abs(coeffs(0) - std::sqrt(4.0 * std::numbers::pi)), 1e-10);
  c.below("max |c_lm|, l > 0", coeffs.tail(27).cwiseAbs().maxCoeff(), 1e-10);
}

void degradation(Criterion& c) {
  const std::size_t h2 = 40, w2 = 36, ch = 3;
  const sampling::ScaleFactor s(3.2);
  const std::size_t h1 = s.lr_size(h2), w1 = s.lr_size(w2);

  const std::vector<double> ones(h2 * w2 * ch, 0.75);
  const auto d = sampling::downsample_x(ones, h2, w2, ch, h1, w1);
  c.below("constant image invariant", max_abs_diff(d, std::vector<double>(d.size(), 0.75)), 1e-12);

  const auto x = oracle::random_vector(h2 * w2 * ch, 1, -1.0, 1.0);
  const auto y = oracle::random_vector(h2 * w2 * ch, 2, -1.0, 1.0);
  std::vector<double> combo(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = 2.5 * x[i] - 0.75 * y[i];
  const auto dx = sampling::downsample_x(x, h2, w2, ch, h1, w1);
  const auto dy = sampling::downsample_x(y, h2, w2, ch, h1, w1);
  auto expected = dx;
  for (std::size_t i = 0; i < dx.size(); ++i) expected[i] = 2.5 * dx[i] - 0.75 * dy[i];
  c.below("linearity", max_abs_diff(sampling::downsample_x(combo, h2, w2, ch, h1, w1), expected),
          1e-10);

  // <crop X, Y> = <X, embed Y> on spectra.
  const auto xr = oracle::random_vector(2 * h2 * w2 * ch, 3, -1.0, 1.0);
  const auto yr = oracle::random_vector(2 * h1 * w1 * ch, 4, -1.0, 1.0);
  std::vector<fft::cplx> xs(h2 * w2 * ch), ys(h1 * w1 * ch);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = {xr[2 * i], xr[2 * i + 1]};
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = {yr[2 * i], yr[2 * i + 1]};
  double worst = 0.0;
  for (auto [a, b] : {std::pair{h1, w1}, {std::size_t{8}, std::size_t{9}}, {std::size_t{20}, std::size_t{18}}}) {
    std::vector<fft::cplx> yb(a * b * ch);
    for (std::size_t i = 0; i < yb.size(); ++i) yb[i] = ys[i % ys.size()];
    const auto cx = sampling::spectral_crop(xs, h2, w2, ch, a, b, 1.0);
    const auto ey = sampling::spectral_embed(yb, a, b, ch, h2, w2, 1.0);
    fft::cplx lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * std::conj(yb[i]);
    for (std::size_t i = 0; i < xs.size(); ++i) rhs += xs[i] * std::conj(ey[i]);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  c.below("crop/embed adjoint identity", worst, 1e-8);

  // round(H2 / s) with s = p / q in exact integer arithmetic.
  bool sizes_ok = true;
  for (auto [p, q] : {std::pair{2, 1}, {3, 1}, {16, 5}, {18, 5}})
    for (std::size_t n : {32, 64, 96, 128, 140, 145, 174, 255}) {
      const std::size_t expect = (2 * n * q + p) / (2 * p);
      sizes_ok = sizes_ok && sampling::ScaleFactor(static_cast<double>(p) / q).lr_size(n) == expect;
    }
  c.check("S x2/x3/x3.2/x3.6 grid sizes match round(H2 / s)", sizes_ok);
}

void fidelity(Criterion& c) {
  const GradientTable table = phantom::repulsion_table(15, 1000.0, 0, 0);
  const auto q = sampling::select_subset(table, 5);
  const sampling::ScaleFactor s(2.0);
  const std::size_t h2 = 32, w2 = 30, z = 3;
  const Volume4D hr(h2, w2, z, 15, oracle::random_vector(h2 * w2 * z * 15, 5, 0.0, 1.0));
  const Volume4D lr = sampling::degrade(hr, q, s);
  const Volume4D pred(h2, w2, z, 15, oracle::random_vector(h2 * w2 * z * 15, 6, 0.0, 1.0));

  const Volume4D once = sampling::data_fidelity(pred, lr, q, s);
  const Volume4D twice = sampling::data_fidelity(once, lr, q, s);
  c.below("idempotence", max_abs_diff(once.data(), twice.data()), 1e-10);

  const Volume4D again = sampling::degrade(once, q, s);
  c.below("re-degradation of sampled directions", max_abs_diff(again.data(), lr.data()), 1e-10);

  bool bitwise = true;
  for (std::size_t k : q.complement(15))
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j)
        for (std::size_t zz = 0; zz < z; ++zz)
          bitwise = bitwise && once(i, j, zz, k) == pred(i, j, zz, k);
  c.check("non-sampled directions pass through bitwise", bitwise);
}

void wavelets(Criterion& c) {
  const auto& h = wavelet::db4_lowpass();
  const auto g = wavelet::db4_highpass();
  double sum = 0.0, worst = 0.0;
  for (double v : h) sum += v;
  worst = std::abs(sum - std::numbers::sqrt2);
  for (int shift = 0; shift < 8; shift += 2) {
    double hh = 0.0, hg = 0.0;
    for (int k = 0; k + shift < 8; ++k) {
      hh += h[k] * h[k + shift];
      hg += h[k] * g[k + shift];
    }
    worst = std::max({worst, std::abs(hh - (shift == 0 ? 1.0 : 0.0)), std::abs(hg)});
  }
  for (int p = 0; p < 4; ++p) {
    double m = 0.0;
    for (int k = 0; k < 8; ++k) m += std::pow(k, p) * g[k];
    worst = std::max(worst, std::abs(m));
  }
  c.below("filter moment/orthonormality conditions", worst, 1e-10);

  double pr = 0.0, parseval = 0.0;
  for (std::size_t n : {8, 16, 32, 64, 128, 256}) {
    const std::size_t levels = n >= 32 ? 3 : (n == 16 ? 2 : 1);
    const auto img = oracle::random_vector(n * n * 2, n, -1.0, 1.0);
    const auto packed = wavelet::dwt2_packed(img, n, n, 2, levels);
    const auto back = wavelet::idwt2_packed(packed, n, n, 2, levels);
    pr = std::max(pr, max_abs_diff(back, img));
    double e0 = 0.0, e1 = 0.0;
    for (double v : img) e0 += v * v;
    for (double v : packed) e1 += v * v;
    parseval = std::max(parseval, std::abs(e0 - e1) / e0);
  }
  c.below("perfect reconstruction, sizes 8-256", pr, 1e-10);
  c.below("Parseval", parseval, 1e-10);

  const auto x = oracle::random_vector(32 * 32 * 4, 9, 0.0, 1.0);
  c.check("l_d(x, x) = 0 exactly", wavelet::freq_loss(x, x, 32, 32, 4) == 0.0);
  const std::vector<double> a(32 * 32 * 4, 0.3), b(32 * 32 * 4, 1.7);
  c.check("l_d(const, const) = 0 exactly", wavelet::freq_loss(a, b, 32, 32, 4) == 0.0);
}

void gradients(Criterion& c, const std::string& tests) {
  const auto t0 = Clock::now();
  c.check("every autodiff op passes finite differences, seeds 0-4",
          run_unit_tests(tests, "--test-suite=autodiff"));
  c.check("full unrolled training loss passes finite differences, seeds 0-4",
          run_unit_tests(tests, "--test-case=\"full unrolled loss*\""));
  c.below("runtime seconds", seconds_since(t0), 120.0);
}

void dti_suite(Criterion& c) {
  const GradientTable table = phantom::repulsion_table(30, 1000.0, 1, 0);
  const dti::TensorFitter fitter(table);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = oracle::random_vector(6, seed, 0.0, 1.0);
    const Eigen::Matrix3d rot = (Eigen::AngleAxisd(6.0 * r[0], Vec3::UnitZ()) *
                                 Eigen::AngleAxisd(3.0 * r[1], Vec3::UnitY()) *
                                 Eigen::AngleAxisd(6.0 * r[2], Vec3::UnitX()))
                                    .toRotationMatrix();
    const Vec3 ev(0.1e-3 + 2.9e-3 * r[3], 0.1e-3 + 2.9e-3 * r[4], 0.1e-3 + 2.9e-3 * r[5]);
    const Eigen::Matrix3d d = rot * ev.asDiagonal() * rot.transpose();
    std::vector<double> sig(table.size(), 1.0);
    for (std::size_t i = 1; i < table.size(); ++i)
      sig[i] = std::exp(-1000.0 * table.dir(i).dot(d * table.dir(i)));
    worst = std::max(worst, (fitter.fit(sig, 1.0).matrix() - d).cwiseAbs().maxCoeff());
  }
  c.below("noise-free tensor recovery", worst, 1e-10);

  dti::DiffTensor iso, stick, general;
  iso.d = {1e-3, 1e-3, 1e-3, 0, 0, 0};
  stick.d = {0, 0, 2e-3, 0, 0, 0};
  general.d = {1.1e-3, 0.4e-3, 0.7e-3, 0.2e-3, -0.1e-3, 0.05e-3};
  c.check("FA(isotropic) = 0", dti::fa(iso) == 0.0);
  c.check("FA(stick) = 1", dti::fa(stick) == 1.0);
  c.check("MD = trace / 3", dti::md(general) == (1.1e-3 + 0.4e-3 + 0.7e-3) / 3.0);

  double dfa = 0.0, dmd = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = oracle::random_vector(3, seed + 100, -3.0, 3.0);
    const Eigen::Matrix3d rot = (Eigen::AngleAxisd(r[0], Vec3::UnitZ()) *
                                 Eigen::AngleAxisd(r[1], Vec3::UnitY()) *
                                 Eigen::AngleAxisd(r[2], Vec3::UnitX()))
                                    .toRotationMatrix();
    const auto t = dti::DiffTensor::from_matrix(rot * general.matrix() * rot.transpose());
    dfa = std::max(dfa, std::abs(dti::fa(t) - dti::fa(general)));
    dmd = std::max(dmd, std::abs(dti::md(t) - dti::md(general)));
  }
  c.below("FA rotation invariance", dfa, 1e-12);
  c.below("MD rotation invariance", dmd, 1e-12);

  const auto ph = phantom::generate(phantom::default_phantom(32, 9), table);
  const auto maps = dti::fit_volume(ph.signal, table);
  c.below("truth-map round trip (tensor)", max_abs_diff(maps.tensors.data(), ph.truth.tensors.data()), 1e-9);
  c.below("truth-map round trip (FA)", max_abs_diff(maps.fa.data(), ph.truth.fa.data()), 1e-9);
  c.below("truth-map round trip (MD)", max_abs_diff(maps.md.data(), ph.truth.md.data()), 1e-9);
}

// ---------------------------------------------------------------------------
// Training runs shared by criteria 8-11.

struct Run {
  train::TrainResult result;
  train::Comparison at2, at32;
};

struct Desk {
  train::Dataset data;
  model::ModelConfig model;
  train::TrainConfig cfg;

  Desk() {
    const GradientTable table = phantom::repulsion_table(15, 1000.0, 1, 0);
    const auto ph = phantom::generate(phantom::default_phantom(32, 9), table);
    const auto n = normalize_b0(ph.signal, table);
    data = train::make_dataset(n.volume, n.table);
  }

  Run run(const model::ModelConfig& m, const train::TrainConfig& t, std::size_t threads,
          bool at32 = false) const {
    const auto t0 = Clock::now();
    Run r;
    r.result = train::train_loop(data, m, t, threads);
    r.at2 = train::compare_on(data.val, r.result.best_params, r.result.model_cfg, data.table, 2.0,
                              3.0, threads);
    if (at32)
      r.at32 = train::compare_on(data.val, r.result.best_params, r.result.model_cfg, data.table,
                                 3.2, 3.0, threads);
    std::printf("    run n_iters=%zu lambda_d=%g threads=%zu: %.1f s\n", m.framework.n_iters,
                t.lambda_d, threads, seconds_since(t0));
    std::fflush(stdout);
    return r;
  }
};

json report_json(const metrics::MetricReport& m) {
  return {{"psnr_db", m.psnr_db}, {"ssim", m.ssim}, {"nrmse", m.nrmse}};
}

bool same_run(const Run& a, const Run& b) {
  if (!(a.result.params == b.result.params) || !(a.result.best_params == b.result.best_params))
    return false;
  const auto& ea = a.result.record.epochs;
  const auto& eb = b.result.record.epochs;
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].loss != eb[i].loss || ea[i].val_loss != eb[i].val_loss ||
        ea[i].val_psnr != eb[i].val_psnr)
      return false;
  return a.at2.model.psnr_db == b.at2.model.psnr_db && a.at2.model.ssim == b.at2.model.ssim &&
         a.at2.model_recon == b.at2.model_recon && a.at32.model.psnr_db == b.at32.model.psnr_db;
}

void io_suite(Criterion& c, const std::string& tests) {
  c.check("io round-trip and malformed-input tests", run_unit_tests(tests, "--test-suite=io"));
  try {
    const auto img = io::read_nifti(std::string(SARL_TEST_DATA) + "/minimal.nii");
    const auto& v = img.volume;
    bool ok = v.height() == 4 && v.width() == 3 && v.slices() == 2 && v.channels() == 2;
    for (std::size_t t = 0; ok && t < 2; ++t)
      for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 3; ++y)
          for (std::size_t x = 0; x < 4; ++x)
            ok = ok && v(x, y, z, t) == static_cast<double>(x + 10 * y + 100 * z + 1000 * t);
    c.check("externally generated minimal NIfTI-1 reads correctly", ok);
  } catch (const std::exception& e) {
    std::printf("    %s\n", e.what());
    c.check("externally generated minimal NIfTI-1 reads correctly", false);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string tests, report_path;
  std::vector<int> only;
  app.add_option("--tests", tests, "unit-test binary")->required();
  app.add_option("--report", report_path, "write a JSON report");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int k) { return selected.empty() || selected.count(k) != 0; };

  json report = json::object();
  int failures = 0;
  auto run = [&](int k, const std::string& name, const std::function<void(Criterion&)>& body) {
    if (!want(k)) return;
    json& log = report[std::to_string(k)];
    log = {{"name", name}, {"checks", json::array()}};
    Criterion c(log);
    const auto t0 = Clock::now();
    try {
      body(c);
    } catch (const std::exception& e) {
      std::printf("    exception: %s\n", e.what());
      c.check(std::string("no exception: ") + e.what(), false);
    }
    const double secs = seconds_since(t0);
    log["pass"] = c.passed();
    log["seconds"] = secs;
    std::printf("CRITERION %2d %s  %s (%.1f s)\n", k, c.passed() ? "PASS" : "FAIL", name.c_str(),
                secs);
    std::fflush(stdout);
    if (!c.passed()) ++failures;
  };

  run(1, "SH round trip", sh_round_trip);
  run(2, "SH basis count and constant fit", sh_constant);
  run(3, "degradation operators", degradation);
  run(4, "data fidelity", fidelity);
  run(5, "wavelet suite", wavelets);
  run(6, "gradient correctness", [&](Criterion& c) { gradients(c, tests); });
  run(7, "DTI suite", dti_suite);

  if (want(8) || want(9) || want(10) || want(11)) {
    const Desk desk;
    const train::TrainConfig full_cfg;
    const model::ModelConfig full_model;
    std::optional<Run> full, no_dfm, no_ld, base;
    auto get_full = [&]() -> const Run& {
      if (!full) full = desk.run(full_model, full_cfg, 1, true);
      return *full;
    };
    model::ModelConfig m0 = full_model;
    m0.framework.n_iters = 0;
    train::TrainConfig t0 = full_cfg;
    t0.lambda_d = 0.0;

    run(8, "end-to-end desk-scale training", [&](Criterion& c) {
      const Run& r = get_full();
      const double first = r.result.record.epochs.front().loss;
      const double last = r.result.record.epochs.back().loss;
      c.note("initial_loss", first);
      c.note("final_loss", last);
      c.note("model", report_json(r.at2.model));
      c.note("baseline", report_json(r.at2.baseline));
      std::printf("    loss %.4f -> %.4f; held-out PSNR model %.3f dB, baseline %.3f dB\n", first,
                  last, r.at2.model.psnr_db, r.at2.baseline.psnr_db);
      c.check("200 optimizer steps", r.result.record.epochs.size() == 200);
      c.below("final / initial training loss", last / first, 0.5);
      c.check("model PSNR - baseline PSNR >= 0.5 dB",
              r.at2.model.psnr_db - r.at2.baseline.psnr_db >= 0.5,
              r.at2.model.psnr_db - r.at2.baseline.psnr_db, 0.5);
    });
    run(9, "arbitrary-scale generalization", [&](Criterion& c) {
      const Run& r = get_full();
      c.note("model", report_json(r.at32.model));
      c.note("baseline", report_json(r.at32.baseline));
      std::printf("    S x3.2 PSNR model %.3f dB, baseline %.3f dB\n", r.at32.model.psnr_db,
                  r.at32.baseline.psnr_db);
      c.check("model PSNR > baseline PSNR at s = 3.2",
              r.at32.model.psnr_db > r.at32.baseline.psnr_db,
              r.at32.model.psnr_db - r.at32.baseline.psnr_db, 0.0);
    });
    run(10, "ablation toggles", [&](Criterion& c) {
      const Run& f = get_full();
      no_dfm = desk.run(m0, full_cfg, 1);
      no_ld = desk.run(full_model, t0, 1);
      base = desk.run(m0, t0, 1);
      json rows = json::object();
      const std::pair<const char*, const Run*> table[] = {
          {"full", &f}, {"no_dfm", &*no_dfm}, {"no_ld", &*no_ld}, {"baseline", &*base}};
      for (const auto& [name, r] : table) {
        rows[name] = {{"val_recon", r->at2.model_recon}, {"metrics", report_json(r->at2.model)}};
        std::printf("    %-8s val l_r %.5f  PSNR %.3f dB  SSIM %.4f\n", name, r->at2.model_recon,
                    r->at2.model.psnr_db, r->at2.model.ssim);
        c.check(std::string(name) + " produces a finite metrics report",
                std::isfinite(r->at2.model.psnr_db) && std::isfinite(r->at2.model.ssim));
      }
      c.note("rows", rows);
      c.check("full validation loss <= baseline validation loss",
              f.at2.model_recon <= base->at2.model_recon, f.at2.model_recon,
              base->at2.model_recon);
    });
    run(11, "determinism", [&](Criterion& c) {
      const Run& f = get_full();
      c.check("full run is bit-identical with 3 threads", same_run(f, desk.run(full_model, full_cfg, 3, true)));
      if (no_dfm) c.check("no-DFM run is bit-identical with 2 threads", same_run(*no_dfm, desk.run(m0, full_cfg, 2)));
      if (no_ld) c.check("no-l_d run is bit-identical with 2 threads", same_run(*no_ld, desk.run(full_model, t0, 2)));
      if (base) c.check("baseline run is bit-identical with 2 threads", same_run(*base, desk.run(m0, t0, 2)));
    });
  }

  run(12, "I/O", [&](Criterion& c) { io_suite(c, tests); });

  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << '\n';
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

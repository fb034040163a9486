// Command-line front end: phantom, degrade, train, superres, shfit, dti,
// metrics and render.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <fstream>
#include <sstream>
#include <string>

#include "sarl/config.hpp"
#include "sarl/core.hpp"
#include "sarl/dti.hpp"
#include "sarl/errors.hpp"
#include "sarl/io.hpp"
#include "sarl/metrics.hpp"
#include "sarl/model.hpp"
#include "sarl/parallel.hpp"
#include "sarl/phantom.hpp"
#include "sarl/sampling.hpp"
#include "sarl/sh.hpp"
#include "sarl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sarl;

namespace {

constexpr int kManifestVersion = 1;

// Collects the files written into one output directory and describes them
// in manifest.json (or <name>.manifest.json for single-file outputs).
class Outputs {
 public:
  Outputs(std::string command, fs::path dir) : command_(std::move(command)), dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }

  void nifti(const std::string& name, const Volume4D& v) { io::write_nifti(v, path(name)); }

  void table(const std::string& stem, const GradientTable& t) {
    io::write_bvalbvec(t, path(stem + ".bval"), path(stem + ".bvec"));
  }

  void text(const std::string& name, const std::string& s) { io::write_text(path(name), s); }

  void config(const config::RunConfig& c) { text("config.json", config::to_json(c).dump(2) + "\n"); }

  void finish(const json& options, std::uint64_t seed,
              const std::string& manifest_name = "manifest.json") {
    json files = json::object();
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    for (const auto& f : files_) {
      const fs::path p = dir_ / f;
      if (fs::is_directory(p)) {
        json sub = json::object();
        std::vector<fs::path> inner;
        for (const auto& e : fs::directory_iterator(p)) inner.push_back(e.path());
        std::sort(inner.begin(), inner.end());
        for (const auto& q : inner)
          sub[q.filename().string()] = {{"bytes", fs::file_size(q)}, {"sha256", io::sha256_file(q)}};
        files[f] = sub;
      } else {
        files[f] = {{"bytes", fs::file_size(p)}, {"sha256", io::sha256_file(p)}};
      }
    }
    json m = {{"command", command_}, {"version", kManifestVersion}, {"seed", seed},
              {"options", options}, {"files", files}};
    io::write_text(dir_ / manifest_name, m.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path dir_;
  std::vector<std::string> files_;
};

fs::path sibling(const fs::path& nii, const std::string& ext) {
  fs::path p = nii;
  return p.replace_extension(ext);
}

struct TableArgs {
  std::string bvals, bvecs;
};

GradientTable load_table(const fs::path& nii, const TableArgs& a) {
  const fs::path bval = a.bvals.empty() ? sibling(nii, ".bval") : fs::path(a.bvals);
  const fs::path bvec = a.bvecs.empty() ? sibling(nii, ".bvec") : fs::path(a.bvecs);
  return io::read_bvalbvec(bval, bvec);
}

// A bvec file on its own describes diffusion-weighted rows at the nominal
// b-value; zero rows are b0.
GradientTable load_dirs(const fs::path& bvec, const std::string& bval_override) {
  fs::path bval = bval_override.empty() ? sibling(bvec, ".bval") : fs::path(bval_override);
  if (fs::exists(bval)) return io::read_bvalbvec(bval, bvec);
  const std::string text = io::read_text(bvec);
  std::vector<std::vector<double>> rows;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::vector<double> r;
      double v;
      while (ls >> v) r.push_back(v);
      if (!r.empty()) rows.push_back(std::move(r));
    }
  }
  std::string bvals;
  if (rows.size() == 3 && rows[0].size() == rows[1].size() && rows[1].size() == rows[2].size())
    for (std::size_t i = 0; i < rows[0].size(); ++i) {
      const double n = std::hypot(rows[0][i], rows[1][i], rows[2][i]);
      bvals += (n == 0.0 ? "0 " : "1000 ");
    }
  return io::parse_bvalbvec(bvals, text);
}

struct Normalized {
  Volume4D volume;
  GradientTable table;  // diffusion-weighted rows only
};

Normalized normalize_if_needed(const Volume4D& vol, const GradientTable& table) {
  if (vol.channels() != table.size())
    throw DataError("volume has " + std::to_string(vol.channels()) +
                    " channels but the gradient table has " + std::to_string(table.size()) +
                    " rows");
  if (table.b0_indices().empty()) return {vol, table};
  auto n = normalize_b0(vol, table);
  return {std::move(n.volume), std::move(n.table)};
}

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::RunConfig{} : config::load_run_config(path);
}

template <typename T>
void apply(const std::optional<T>& flag, T& dst) {
  if (flag) dst = *flag;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

json report_json(const metrics::MetricReport& r, bool per_channel) {
  json j = {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"nrmse", r.nrmse}};
  if (per_channel) {
    json a = json::array();
    for (const auto& c : r.per_channel)
      a.push_back({{"slice", c.slice}, {"channel", c.channel}, {"psnr_db", c.psnr},
                   {"ssim", c.ssim}, {"nrmse", c.nrmse}});
    j["per_channel"] = a;
  }
  return j;
}

json epoch_json(const train::EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}, {"recon", r.recon},
            {"freq", r.freq}, {"seconds", r.seconds}};
  if (r.validated) {
    j["val_loss"] = r.val_loss;
    j["val_recon"] = r.val_recon;
    j["val_freq"] = r.val_freq;
    j["val_psnr"] = r.val_psnr;
    j["val_ssim"] = r.val_ssim;
  }
  return j;
}

// Slice z and its neighbours with edge replication: H x W x 3 x N.
Volume4D triple_at(const Volume4D& v, std::size_t z) {
  Volume4D t(v.height(), v.width(), 3, v.channels(), v.spacing());
  for (std::size_t k = 0; k < 3; ++k) {
    const long src = std::clamp<long>(static_cast<long>(z) + static_cast<long>(k) - 1, 0,
                                      static_cast<long>(v.slices()) - 1);
    t.set_slice(k, v.slice(static_cast<std::size_t>(src)));
  }
  return t;
}

Volume4D synth_with_b0(const Volume4D& coeffs, const GradientTable& table, int order) {
  const auto dwi = table.dwi_indices();
  const auto sub = table.subset(dwi);
  const Volume4D syn = sh::synth_volume(coeffs, sub.dirs(), order);
  Volume4D out(coeffs.height(), coeffs.width(), coeffs.slices(), table.size(), coeffs.spacing());
  for (std::size_t h = 0; h < out.height(); ++h)
    for (std::size_t w = 0; w < out.width(); ++w)
      for (std::size_t z = 0; z < out.slices(); ++z) {
        for (std::size_t b : table.b0_indices()) out(h, w, z, b) = 1.0;
        for (std::size_t k = 0; k < dwi.size(); ++k) out(h, w, z, dwi[k]) = syn(h, w, z, k);
      }
  return out;
}

// Voxel size after resampling `v` to h2 x w2 in-plane.
std::array<double, 3> scaled_spacing(const Volume4D& lr, std::size_t h2, std::size_t w2) {
  auto s = lr.spacing();
  s[0] *= static_cast<double>(lr.height()) / static_cast<double>(h2);
  s[1] *= static_cast<double>(lr.width()) / static_cast<double>(w2);
  return s;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::optional<std::size_t> size, slices, dirs, b0;
  std::optional<double> bval, noise;
  std::optional<std::uint64_t> seed;
  std::string config, out;
};

void run_phantom(const PhantomArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  auto& p = cfg.phantom;
  apply(a.size, p.size);
  apply(a.slices, p.slices);
  apply(a.dirs, p.n_dirs);
  apply(a.b0, p.n_b0);
  apply(a.bval, p.bval);
  apply(a.noise, p.noise_sigma);
  apply(a.seed, p.seed);

  auto spec = phantom::default_phantom(p.size, p.slices);
  spec.noise_sigma = p.noise_sigma;
  spec.seed = p.seed;
  const GradientTable table = phantom::repulsion_table(p.n_dirs, p.bval, p.n_b0, p.seed);
  const phantom::Phantom ph = phantom::generate(spec, table);

  Outputs out("phantom", a.out);
  out.nifti("hr.nii", ph.signal);
  out.table("hr", table);
  out.nifti("truth_tensor.nii", ph.truth.tensors);
  out.nifti("truth_fa.nii", ph.truth.fa);
  out.nifti("truth_md.nii", ph.truth.md);
  out.nifti("truth_s0.nii", ph.truth.s0);
  out.config(cfg);
  out.finish(config::to_json(cfg)["phantom"], p.seed);
}

struct DegradeArgs {
  std::string in, config, out;
  TableArgs table;
  std::optional<double> scale, noise;
  std::optional<std::size_t> qdirs;
  std::optional<std::uint64_t> seed;
};

void run_degrade(const DegradeArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  apply(a.scale, cfg.degrade.scale);
  apply(a.noise, cfg.degrade.noise);
  apply(a.seed, cfg.degrade.seed);

  const auto img = io::read_nifti(a.in);
  const GradientTable full = load_table(a.in, a.table);
  const Normalized hr = normalize_if_needed(img.volume, full);
  const std::size_t n2 = hr.table.size();
  const std::size_t k = a.qdirs ? *a.qdirs : train::subset_size(n2, cfg.degrade.q_subset);
  if (k < 1 || k > n2)
    throw UsageError("--qdirs must be between 1 and " + std::to_string(n2));
  cfg.degrade.q_subset = static_cast<double>(n2) / static_cast<double>(k);

  const sampling::ScaleFactor s(cfg.degrade.scale);
  const sampling::QSubset q = sampling::select_subset(hr.table, k);
  Volume4D lr = sampling::degrade(hr.volume, q, s, {cfg.degrade.noise, cfg.degrade.seed});
  const std::size_t h2 = hr.volume.height(), w2 = hr.volume.width();
  lr.set_spacing(scaled_spacing(hr.volume, lr.height(), lr.width()));
  Volume4D zf = sampling::zero_fill_volume(lr, h2, w2);
  zf.set_spacing(hr.volume.spacing());
  const GradientTable sampled = hr.table.subset(q.indices);

  Outputs out("degrade", a.out);
  out.nifti("lr.nii", lr);
  out.table("lr", sampled);
  out.nifti("zf.nii", zf);
  out.table("zf", sampled);
  out.nifti("hr_norm.nii", hr.volume);
  out.table("hr_norm", hr.table);
  const json subset = {{"indices", q.indices},
                       {"n_total", n2},
                       {"scale", cfg.degrade.scale},
                       {"hr_size", {h2, w2}},
                       {"lr_size", {lr.height(), lr.width()}},
                       {"min_antipodal_angle_deg",
                        sampling::min_antipodal_angle(hr.table, q.indices) * 180.0 / M_PI}};
  out.text("subset.json", subset.dump(2) + "\n");
  out.config(cfg);
  json opts = config::to_json(cfg)["degrade"];
  opts["qdirs"] = k;
  opts["input"] = a.in;
  out.finish(opts, cfg.degrade.seed);
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

void run_train(const TrainArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  apply(a.epochs, cfg.train.epochs);
  apply(a.seed, cfg.train.seed);
  cfg.train.validate();

  const fs::path hr_path = fs::is_directory(a.data) ? fs::path(a.data) / "hr.nii" : fs::path(a.data);
  const auto img = io::read_nifti(hr_path);
  const Normalized hr = normalize_if_needed(img.volume, load_table(hr_path, {}));
  const auto data = train::make_dataset(hr.volume, hr.table, cfg.train.val_stride);

  Outputs out("train", a.out);
  const fs::path log_path = out.path("train_log.jsonl");
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot open '" + log_path.string() + "' for writing");
  const std::size_t threads = resolve_threads(a.threads);
  const auto res = train::train_loop(data, cfg.model, cfg.train, threads,
                                     [&](const train::EpochRecord& r) {
                                       log << epoch_json(r).dump() << '\n';
                                       log.flush();
                                       std::fprintf(stderr, "epoch %zu loss %.6f%s\n", r.epoch,
                                                    r.loss,
                                                    r.validated ? " (validated)" : "");
                                     });
  log.close();
  cfg.model = res.model_cfg;

  const auto& eval_set = data.val.empty() ? data.train : data.val;
  const auto cmp = train::compare_on(eval_set, res.best_params, res.model_cfg, data.table,
                                     cfg.eval.scale, cfg.eval.q_factor, threads,
                                     cfg.eval.baseline_lambda);
  const json report = {{"scale", cfg.eval.scale},
                       {"q_factor", cfg.eval.q_factor},
                       {"slices", eval_set.size()},
                       {"model", report_json(cmp.model, false)},
                       {"baseline", report_json(cmp.baseline, false)},
                       {"model_recon", cmp.model_recon},
                       {"best_epoch", res.record.best_epoch},
                       {"best_val_loss", res.record.best_val_loss},
                       {"initial_loss", res.record.epochs.front().loss},
                       {"final_loss", res.record.epochs.back().loss}};
  out.text("report.json", report.dump(2) + "\n");

  io::Checkpoint ck;
  ck.model = res.model_cfg;
  ck.train = cfg.train;
  ck.seed = cfg.train.seed;
  ck.epoch = res.record.best_epoch;
  ck.metrics = report;
  const auto q = sampling::select_subset(data.table, res.model_cfg.in_channels);
  for (std::size_t i : q.indices) ck.input_dirs.push_back(data.table.dir(i));
  ck.params = res.best_params;
  io::save_checkpoint(ck, a.out + "/model.ckpt");
  out.path("model.ckpt");
  out.config(cfg);
  json opts = config::to_json(cfg);
  opts["data"] = a.data;
  out.finish(opts, cfg.train.seed);
}

struct SuperresArgs {
  std::string ckpt, in, dirs, dir_bvals, out;
  TableArgs table;
  double scale = 2.0;
  std::size_t threads = 0;
};

void run_superres(const SuperresArgs& a) {
  const io::Checkpoint ck = io::load_checkpoint(a.ckpt);
  const auto img = io::read_nifti(a.in);
  const Volume4D& lr = img.volume;
  const GradientTable lr_table = load_table(a.in, a.table);
  if (!lr_table.b0_indices().empty())
    throw DataError("superres expects b0-normalized diffusion-weighted input without b0 rows");
  if (lr_table.size() != lr.channels())
    throw DataError("input has " + std::to_string(lr.channels()) +
                    " channels but its gradient table has " + std::to_string(lr_table.size()));
  if (lr.channels() != ck.model.in_channels)
    throw DataError("model expects " + std::to_string(ck.model.in_channels) +
                    " input directions, got " + std::to_string(lr.channels()));
  const GradientTable target = load_dirs(a.dirs, a.dir_bvals);
  if (!(a.scale >= 1.0)) throw UsageError("--scale must be >= 1");

  const std::size_t h2 = round_half_up(static_cast<double>(lr.height()) * a.scale);
  const std::size_t w2 = round_half_up(static_cast<double>(lr.width()) * a.scale);
  const int order = ck.model.framework.sh_order;
  const std::size_t nc = sh::num_coeffs(order);
  Volume4D coeffs(h2, w2, lr.slices(), nc, scaled_spacing(lr, h2, w2));
  const auto& dirs = lr_table.dirs();
  parallel_for(lr.slices(), resolve_threads(a.threads), [&](std::size_t z) {
    const Volume4D c = model::infer_coefficients(ck.params, ck.model, triple_at(lr, z), h2, w2, dirs);
    coeffs.set_slice(z, c.slice(0));
  });

  Outputs out("superres", a.out);
  out.nifti("sh_coeffs.nii", coeffs);
  out.nifti("dw.nii", synth_with_b0(coeffs, target, order));
  out.table("dw", target);
  const json opts = {{"ckpt", a.ckpt}, {"input", a.in}, {"scale", a.scale}, {"dirs", a.dirs},
                     {"hr_size", {h2, w2}}};
  out.finish(opts, ck.seed);
}

struct ShfitArgs {
  std::string in, dirs, dir_bvals, out;
  TableArgs table;
  double lambda = train::kBaselineLambda;
  int order = sh::kDefaultOrder;
  double scale = 1.0;
};

void run_shfit(const ShfitArgs& a) {
  const auto img = io::read_nifti(a.in);
  const Normalized n = normalize_if_needed(img.volume, load_table(a.in, a.table));
  if (!(a.scale >= 1.0)) throw UsageError("--scale must be >= 1");
  Volume4D src = n.volume;
  if (a.scale > 1.0) {
    const std::size_t h2 = round_half_up(static_cast<double>(src.height()) * a.scale);
    const std::size_t w2 = round_half_up(static_cast<double>(src.width()) * a.scale);
    const auto sp = scaled_spacing(src, h2, w2);
    src = sampling::zero_fill_volume(src, h2, w2);
    src.set_spacing(sp);
  }
  Volume4D coeffs = sh::fit_volume(src, n.table.dirs(), a.lambda, a.order);
  coeffs.set_spacing(src.spacing());

  Outputs out("shfit", a.out);
  out.nifti("sh_coeffs.nii", coeffs);
  if (!a.dirs.empty()) {
    const GradientTable target = load_dirs(a.dirs, a.dir_bvals);
    out.nifti("dw.nii", synth_with_b0(coeffs, target, a.order));
    out.table("dw", target);
  }
  const json opts = {{"input", a.in}, {"lambda", a.lambda}, {"order", a.order},
                     {"scale", a.scale}, {"dirs", a.dirs}};
  out.finish(opts, 0);
}

struct DtiArgs {
  std::string in, out;
  TableArgs table;
  double mask_threshold = 1e-2;
};

void run_dti(const DtiArgs& a) {
  const auto img = io::read_nifti(a.in);
  const GradientTable table = load_table(a.in, a.table);
  const dti::DtiMaps m = dti::fit_volume(img.volume, table, a.mask_threshold);
  Outputs out("dti", a.out);
  out.nifti("tensor.nii", m.tensors);
  out.nifti("fa.nii", m.fa);
  out.nifti("md.nii", m.md);
  out.nifti("qc.nii", m.qc);
  const json opts = {{"input", a.in}, {"mask_threshold", a.mask_threshold}};
  out.finish(opts, 0);
}

struct MetricsArgs {
  std::string test, ref, out;
  bool per_channel = false;
};

void run_metrics(const MetricsArgs& a) {
  const auto t = io::read_nifti(a.test);
  const auto r = io::read_nifti(a.ref);
  const auto rep = metrics::evaluate(t.volume, r.volume);
  const fs::path out_path(a.out);
  const fs::path dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  Outputs out("metrics", dir);
  json j = report_json(rep, a.per_channel);
  j["test"] = a.test;
  j["ref"] = a.ref;
  out.text(out_path.filename().string(), j.dump(2) + "\n");
  out.finish({{"test", a.test}, {"ref", a.ref}}, 0,
             out_path.stem().string() + ".manifest.json");
}

struct RenderArgs {
  std::string in, window, out;
  std::optional<std::size_t> slice;
  std::size_t channel = 0;
};

void run_render(const RenderArgs& a) {
  double lo = 0.0, hi = 0.0;
  {
    const auto comma = a.window.find(',');
    std::size_t used_lo = 0, used_hi = 0;
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      lo = std::stod(a.window.substr(0, comma), &used_lo);
      hi = std::stod(a.window.substr(comma + 1), &used_hi);
    } catch (const std::exception&) {
      throw UsageError("--window must be 'lo,hi', got '" + a.window + "'");
    }
    if (used_lo != comma || used_hi != a.window.size() - comma - 1)
      throw UsageError("--window must be 'lo,hi', got '" + a.window + "'");
  }
  const auto img = io::read_nifti(a.in);
  const Volume4D& v = img.volume;
  const std::size_t z = a.slice ? *a.slice : v.slices() / 2;
  if (z >= v.slices()) throw UsageError("--slice out of range");
  if (a.channel >= v.channels()) throw UsageError("--channel out of range");
  std::vector<double> map(v.height() * v.width());
  for (std::size_t h = 0; h < v.height(); ++h)
    for (std::size_t w = 0; w < v.width(); ++w) map[h * v.width() + w] = v(h, w, z, a.channel);

  const fs::path out_path(a.out);
  const fs::path dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  Outputs out("render", dir);
  io::render_map(map, v.height(), v.width(), out.path(out_path.filename().string()), lo, hi);
  out.finish({{"input", a.in}, {"window", {lo, hi}}, {"slice", z}, {"channel", a.channel}}, 0,
             out_path.stem().string() + ".manifest.json");
}

void add_table_opts(CLI::App* c, TableArgs& t) {
  c->add_option("--bvals", t.bvals, "b-value file (default: next to the volume)");
  c->add_option("--bvecs", t.bvecs, "b-vector file (default: next to the volume)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arbitrary-scale spatial and angular super-resolution of diffusion MRI"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (0: SARL_THREADS or hardware concurrency)");

  PhantomArgs pa;
  auto* ph = app.add_subcommand("phantom", "synthetic HR diffusion phantom with truth maps");
  ph->add_option("--size", pa.size, "in-plane size");
  ph->add_option("--slices", pa.slices, "number of slices");
  ph->add_option("--dirs", pa.dirs, "number of diffusion directions");
  ph->add_option("--bval", pa.bval, "b-value in s/mm^2");
  ph->add_option("--b0", pa.b0, "number of b0 volumes");
  ph->add_option("--noise", pa.noise, "Rician noise sigma");
  ph->add_option("--seed", pa.seed, "random seed");
  ph->add_option("--config", pa.config, "run configuration JSON");
  ph->add_option("--out", pa.out, "output directory")->required();

  DegradeArgs da;
  auto* dg = app.add_subcommand("degrade", "k-space truncation and q-space subsampling");
  dg->add_option("--in", da.in, "HR volume (.nii)")->required();
  add_table_opts(dg, da.table);
  dg->add_option("--scale", da.scale, "spatial downsampling factor");
  dg->add_option("--qdirs", da.qdirs, "number of directions kept");
  dg->add_option("--noise", da.noise, "complex k-space noise sigma");
  dg->add_option("--seed", da.seed, "noise seed");
  dg->add_option("--config", da.config, "run configuration JSON");
  dg->add_option("--out", da.out, "output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train the model on an HR volume");
  tr->add_option("--config", ta.config, "run configuration JSON");
  tr->add_option("--data", ta.data, "directory with hr.nii or an HR .nii path")->required();
  tr->add_option("--epochs", ta.epochs, "override train.epochs");
  tr->add_option("--seed", ta.seed, "override train.seed");
  tr->add_option("--out", ta.out, "output directory")->required();

  SuperresArgs sa;
  auto* sr = app.add_subcommand("superres", "SH coefficient map and DW images on the HR grid");
  sr->add_option("--ckpt", sa.ckpt, "checkpoint directory")->required();
  sr->add_option("--in", sa.in, "LR volume (.nii)")->required();
  add_table_opts(sr, sa.table);
  sr->add_option("--scale", sa.scale, "upsampling factor")->required();
  sr->add_option("--dirs", sa.dirs, "bvec file of the output directions")->required();
  sr->add_option("--dir-bvals", sa.dir_bvals, "bval file for --dirs");
  sr->add_option("--out", sa.out, "output directory")->required();

  ShfitArgs sf;
  auto* sh = app.add_subcommand("shfit", "direct least-squares SH fit");
  sh->add_option("--in", sf.in, "volume (.nii)")->required();
  add_table_opts(sh, sf.table);
  sh->add_option("--lambda", sf.lambda, "Laplace-Beltrami weight");
  sh->add_option("--order", sf.order, "even SH order");
  sh->add_option("--scale", sf.scale, "zero-fill upsampling before the fit");
  sh->add_option("--dirs", sf.dirs, "bvec file; also synthesize DW images there");
  sh->add_option("--dir-bvals", sf.dir_bvals, "bval file for --dirs");
  sh->add_option("--out", sf.out, "output directory")->required();

  DtiArgs ta2;
  auto* dt = app.add_subcommand("dti", "tensor, FA and MD maps");
  dt->add_option("--in", ta2.in, "volume (.nii)")->required();
  add_table_opts(dt, ta2.table);
  dt->add_option("--mask-threshold", ta2.mask_threshold, "background threshold without b0");
  dt->add_option("--out", ta2.out, "output directory")->required();

  MetricsArgs ma;
  auto* me = app.add_subcommand("metrics", "PSNR, SSIM and NRMSE against a reference");
  me->add_option("--test", ma.test, "test volume (.nii)")->required();
  me->add_option("--ref", ma.ref, "reference volume (.nii)")->required();
  me->add_flag("--per-channel", ma.per_channel, "include per-image values");
  me->add_option("--out", ma.out, "report path (.json)")->required();

  RenderArgs ra;
  auto* re = app.add_subcommand("render", "window one slice of a map to an 8-bit PGM");
  re->add_option("--in", ra.in, "map volume (.nii)")->required();
  re->add_option("--window", ra.window, "lo,hi")->required();
  re->add_option("--slice", ra.slice, "slice index (default: middle)");
  re->add_option("--channel", ra.channel, "channel index");
  re->add_option("--out", ra.out, "image path (.pgm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    ta.threads = sa.threads = threads;
    if (*ph) run_phantom(pa);
    else if (*dg) run_degrade(da);
    else if (*tr) run_train(ta);
    else if (*sr) run_superres(sa);
    else if (*sh) run_shfit(sf);
    else if (*dt) run_dti(ta2);
    else if (*me) run_metrics(ma);
    else if (*re) run_render(ra);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

#include "nnspec/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/field.hpp"
#include "nnspec/netsim.hpp"
#include "nnspec/spectrum.hpp"

#ifndef NNSPEC_VERSION
#define NNSPEC_VERSION "0.0.0"
#endif

namespace nnspec {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<int> kTableDepths = {1, 20, 40, 60, 80};
const std::vector<double> kSparseAlphas = {0.01, 0.005, 0.001, 0.0005, 0.0001};
const std::vector<double> kHighAlphas = {0.5, 0.4, 0.3, 0.2, 0.1, 0.01};

struct RunConfig {
  std::string command;
  std::string activation;
  std::vector<std::string> params;
  double gamma_b = 0;
  int d = 2;
  std::vector<int> depths;
  std::vector<double> alphas;
  int lmax = -1;
  double tail_target = 1e-6;
  std::uint64_t seed = 0;
  int width = 500;
  int replicas = 1000;
  std::string grid;
  std::string out;
  std::string format = "json";
  std::string render = "ppm";
  int image_width = 1024;
  int k_max = 4;
  int identity_s = 0;
  std::string law_file;
  double band = 1e-6;
  int seeds = 100;

  // resolved
  Activation act;
  std::map<std::string, double> param_map;
};

std::map<std::string, double> parse_params(const std::vector<std::string>& raw) {
  std::map<std::string, double> m;
  for (const auto& p : raw) {
    auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects KEY=VAL, got '" + p + "'");
    const std::string key = p.substr(0, eq), val = p.substr(eq + 1);
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(val, &used);
    } catch (const std::exception&) {
      throw UsageError("--param " + key + ": '" + val + "' is not a number");
    }
    if (used != val.size()) throw UsageError("--param " + key + ": '" + val + "' is not a number");
    m[key] = v;
  }
  return m;
}

std::pair<int, int> parse_grid(const std::string& g, int lmax) {
  if (g.empty()) return {std::max(2 * lmax, 2), std::max(4 * lmax, 4)};
  int a = 0, b = 0;
  char x = 0, extra = 0;
  if (std::sscanf(g.c_str(), "%d%c%d%c", &a, &x, &b, &extra) != 3 || (x != 'x' && x != 'X') || a < 1 || b < 1)
    throw UsageError("--grid expects NxM, got '" + g + "'");
  return {a, b};
}

json config_json(const RunConfig& c) {
  json j = {{"command", c.command},   {"activation", c.act.label()}, {"params", c.act.params},
            {"gamma_b", c.gamma_b},   {"d", c.d},                     {"depths", c.depths},
            {"lmax", c.lmax},         {"tail_target", c.tail_target}, {"seed", c.seed}};
  if (c.command == "support" || c.command == "reproduce-tables") j["alphas"] = c.alphas;
  if (c.command == "simulate") {
    j["width"] = c.width;
    j["replicas"] = c.replicas;
  }
  if (c.command == "synth" || c.command == "reproduce-tables") {
    j["grid"] = c.grid;
    j["image_width"] = c.image_width;
  }
  if (c.command == "reproduce-tables") j["seeds"] = c.seeds;
  if (c.command == "moments") {
    j["k_max"] = c.k_max;
    j["identity_s"] = c.identity_s;
    j["law_file"] = c.law_file;
  }
  return j;
}

json provenance(const RunConfig& c, const json& tails = json::object()) {
  return {{"tool", "nnspec"}, {"version", NNSPEC_VERSION}, {"config", config_json(c)}, {"tail_residuals", tails}};
}

class Output {
 public:
  Output(const RunConfig& c, std::ostream& out) : cfg_(c), out_(out) {
    if (!c.out.empty()) fs::create_directories(c.out);
  }
  bool to_dir() const { return !cfg_.out.empty(); }

  void text(const std::string& name, const std::string& body) {
    if (!to_dir()) {
      out_ << body;
      return;
    }
    const fs::path p = fs::path(cfg_.out) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << body;
    files_.push_back(p.string());
  }
  std::ofstream binary(const std::string& name) {
    const fs::path p = fs::path(cfg_.out) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    files_.push_back(p.string());
    return f;
  }
  std::string path(const std::string& name) {
    const fs::path p = fs::path(cfg_.out) / name;
    files_.push_back(p.string());
    return p.string();
  }
  void finish() {
    if (to_dir()) out_ << json{{"files", files_}}.dump() << "\n";
  }

 private:
  const RunConfig& cfg_;
  std::ostream& out_;
  std::vector<std::string> files_;
};

std::string csv_with_provenance(const json& prov, const std::string& body) {
  return "# " + prov.dump() + "\n" + body;
}

ShallowKernel kernel_for(const RunConfig& c) { return default_kernel(c.act, c.gamma_b); }

json tails_for(const ShallowKernel& k, const std::vector<SpectralLaw>& laws) {
  json t = {{"kernel_series_tail", k.tail_bound()}};
  json per = json::object();
  for (const auto& l : laws) per[std::to_string(l.depth)] = l.tail_mass;
  t["law_tail_mass"] = per;
  return t;
}

LawOptions law_options(const RunConfig& c) {
  LawOptions o;
  o.ell_max = c.lmax;
  o.tail_target = c.tail_target;
  return o;
}

int cmd_classify(const RunConfig& c, std::ostream& out) {
  auto k = kernel_for(c);
  auto r = classify(k, c.band);
  json j = {{"activation", c.act.label()},
            {"gamma_b", c.gamma_b},
            {"kappa_prime_1", r.kappa_prime_1},
            {"regime", regime_name(r.regime)},
            {"band", r.band},
            {"kernel", k.describe()},
            {"provenance", provenance(c, {{"kernel_series_tail", k.tail_bound()}})}};
  Output o(c, out);
  o.text("classify.json", j.dump(2) + "\n");
  o.finish();
  return 0;
}

int cmd_spectrum(const RunConfig& c, std::ostream& out) {
  auto k = kernel_for(c);
  auto laws = spectral_laws(k, c.depths, c.d, law_options(c));
  auto prov = provenance(c, tails_for(k, laws));
  auto reg = classify(k, c.band);
  Output o(c, out);
  json all = json::array();
  for (const auto& law : laws) {
    LawReport rep;
    rep.moments = moments(law, c.k_max);
    rep.regime = reg;
    json j = law_to_json(law, rep);
    j["provenance"] = prov;
    const std::string stem = "spectrum_L" + std::to_string(law.depth);
    if (c.format == "csv") {
      std::ostringstream os;
      write_law_csv(os, law);
      o.text(stem + ".csv", csv_with_provenance(prov, os.str()));
    } else if (o.to_dir()) {
      o.text(stem + ".json", j.dump(2) + "\n");
    }
    all.push_back(std::move(j));
  }
  if (c.format != "csv" && !o.to_dir()) o.text("", all.dump(2) + "\n");
  o.finish();
  return 0;
}

json moments_json(const std::vector<MomentEstimate>& ms) {
  json a = json::array();
  for (std::size_t i = 0; i < ms.size(); ++i)
    a.push_back({{"k", i + 1},
                 {"value", ms[i].value},
                 {"truncated", ms[i].truncated},
                 {"completed", ms[i].completed},
                 {"divergent", ms[i].divergent}});
  return a;
}

int cmd_moments(const RunConfig& c, std::ostream& out) {
  std::vector<SpectralLaw> laws;
  std::optional<ShallowKernel> k;
  if (!c.law_file.empty()) {
    std::ifstream f(c.law_file);
    if (!f) throw UsageError("cannot read " + c.law_file);
    json doc = json::parse(f);
    if (doc.is_array())
      for (const auto& j : doc) laws.push_back(law_from_json(j));
    else
      laws.push_back(law_from_json(doc));
    if (!c.activation.empty()) k = kernel_for(c);
  } else {
    k = kernel_for(c);
    const int s_need = c.identity_s > 0 ? 2 * c.identity_s : 0;
    laws = moment_laws(*k, c.depths, c.d, std::max(c.k_max, s_need));
  }

  json rows = json::array();
  for (const auto& law : laws) {
    json r = {{"L", law.depth}, {"d", law.d}, {"ell_max", law.ell_max}, {"tail_mass", law.tail_mass}};
    r["moments"] = moments_json(moments(law, c.k_max));
    if (k) {
      int s_max = c.identity_s > 0 ? c.identity_s : std::min(3, k->smoothness());
      s_max = std::min(s_max, kMaxTowerOrder);
      json ids = json::array();
      if (s_max >= 1) {
        auto tower = deep_derivative_tower(*k, law.depth, s_max);
        for (int s = 1; s <= s_max; ++s) {
          auto chk = verify_moment_identity(law, tower, s);
          ids.push_back({{"s", s}, {"lhs", chk.lhs}, {"rhs", chk.rhs}, {"residual", chk.residual},
                         {"completed", chk.completed}});
        }
      }
      r["identity"] = ids;
      r["derivative_variance_r1"] = derivative_variance(law, 1).value;
    }
    rows.push_back(std::move(r));
  }
  json tails = json::object();
  for (const auto& l : laws) tails[std::to_string(l.depth)] = l.tail_mass;
  json j = {{"laws", rows}, {"provenance", provenance(c, {{"law_tail_mass", tails}})}};
  Output o(c, out);
  o.text("moments.json", j.dump(2) + "\n");
  o.finish();
  return 0;
}

std::vector<double> default_alphas(const RunConfig& c, Regime r) {
  if (!c.alphas.empty()) return c.alphas;
  return r == Regime::High ? kHighAlphas : kSparseAlphas;
}

struct SupportTable {
  std::vector<double> alphas;
  std::vector<SpectralLaw> laws;
  std::vector<std::vector<int>> C;  // [alpha][depth]
  std::vector<std::vector<std::uint64_t>> D;
};

SupportTable support_table(const ShallowKernel& k, const RunConfig& c, const std::vector<double>& alphas) {
  SupportTable t;
  t.alphas = alphas;
  LawOptions o = law_options(c);
  if (c.lmax < 0) o.tail_target = std::min(c.tail_target, *std::min_element(alphas.begin(), alphas.end()) / 10);
  t.laws = spectral_laws(k, c.depths, c.d, o);
  for (double a : alphas) {
    std::vector<int> cr;
    std::vector<std::uint64_t> dr;
    for (const auto& law : t.laws) {
      cr.push_back(effective_support(law, a));
      dr.push_back(effective_dimension(law, a));
    }
    t.C.push_back(cr);
    t.D.push_back(dr);
  }
  return t;
}

std::string support_csv(const SupportTable& t) {
  std::ostringstream os;
  os << "alpha,L,C_alpha,D_alpha\n";
  for (std::size_t i = 0; i < t.alphas.size(); ++i)
    for (std::size_t j = 0; j < t.laws.size(); ++j)
      os << t.alphas[i] << "," << t.laws[j].depth << "," << t.C[i][j] << "," << t.D[i][j] << "\n";
  return os.str();
}

// alpha rows, depth columns, "C (D)" cells
std::string support_text(const SupportTable& t) {
  std::ostringstream os;
  os << "alpha";
  for (const auto& l : t.laws) os << "\tL=" << l.depth;
  os << "\n";
  for (std::size_t i = 0; i < t.alphas.size(); ++i) {
    os << t.alphas[i];
    for (std::size_t j = 0; j < t.laws.size(); ++j) os << "\t" << t.C[i][j] << " (" << t.D[i][j] << ")";
    os << "\n";
  }
  return os.str();
}

json support_json(const SupportTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.alphas.size(); ++i)
    for (std::size_t j = 0; j < t.laws.size(); ++j)
      rows.push_back({{"alpha", t.alphas[i]}, {"L", t.laws[j].depth}, {"C_alpha", t.C[i][j]}, {"D_alpha", t.D[i][j]}});
  return rows;
}

int cmd_support(const RunConfig& c, std::ostream& out) {
  auto k = kernel_for(c);
  auto reg = classify(k, c.band);
  auto t = support_table(k, c, default_alphas(c, reg.regime));
  auto prov = provenance(c, tails_for(k, t.laws));
  Output o(c, out);
  if (c.format == "csv") {
    o.text("support.csv", csv_with_provenance(prov, support_csv(t)));
  } else {
    json j = {{"regime", regime_name(reg.regime)}, {"table", support_json(t)}, {"provenance", prov}};
    o.text("support.json", j.dump(2) + "\n");
  }
  if (o.to_dir()) o.text("support.txt", support_text(t));
  o.finish();
  return 0;
}

int cmd_synth(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.d != 2) throw UsageError("synth works on S^2 only (--d 2)");
  const int lmax = c.lmax >= 0 ? c.lmax : 256;
  if (c.out.empty()) throw UsageError("synth needs --out DIR");
  auto k = kernel_for(c);
  LawOptions lo;
  lo.ell_max = lmax;
  auto laws = spectral_laws(k, c.depths, 2, lo);
  auto [n_lat, n_lon] = parse_grid(c.grid, lmax);
  auto prov = provenance(c, tails_for(k, laws));
  Output o(c, out);
  for (const auto& law : laws) {
    auto coeffs = sample_coefficients(law, c.seed);
    auto g = synthesize(coeffs, n_lat, n_lon);
    if (g.aliased)
      err << json{{"warning", {{"kind", "aliasing"}, {"message", "grid under-resolves lmax; need at least 2 lmax per axis"}}}}
                 .dump()
          << "\n";
    const std::string stem = "field_L" + std::to_string(law.depth);
    {
      auto f = o.binary(stem + ".grid");
      write_grid(f, g);
    }
    auto r = mollweide_render(g, c.image_width);
    std::string image;
    if (c.render == "png") {
      image = stem + ".png";
      if (!write_png(o.path(image), r)) throw UsageError("this build has no PNG support; use --render ppm");
    } else {
      image = stem + ".ppm";
      auto f = o.binary(image);
      write_ppm(f, r);
    }
    auto st = field_stats(g);
    json side = raster_sidecar(r, g);
    side["image"] = image;
    side["grid"] = {{"n_lat", n_lat}, {"n_lon", n_lon}, {"aliased", g.aliased}};
    side["stats"] = {{"min", st.min}, {"max", st.max}, {"mean", st.mean}, {"var", st.var}};
    side["provenance"] = prov;
    o.text(stem + ".json", side.dump(2) + "\n");
  }
  o.finish();
  return 0;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  const int lmax = c.lmax >= 0 ? c.lmax : 32;
  auto k = kernel_for(c);
  Output o(c, out);
  json summary = json::array();
  for (int L : c.depths) {
    NetworkConfig nc;
    nc.d = c.d;
    nc.widths.assign(L, c.width);
    nc.activation = c.act;
    nc.gamma_b = c.gamma_b;
    nc.seed = c.seed;
    auto e = simulate(nc, lmax, c.replicas);
    LawOptions lo;
    lo.ell_max = lmax;
    DeepKernel dk(k, L);
    auto law = spectral_law(dk, c.d, lo);
    auto cmp = compare(law, e, &dk);
    auto prov = provenance(c, tails_for(k, {law}));
    json j = {{"L", L}, {"compare", comparison_to_json(cmp)}, {"replicas", e.replicas}, {"width", c.width}};
    json masses = json::array();
    for (int l = 0; l <= lmax; ++l)
      masses.push_back({{"ell", l}, {"empirical", e.masses[l]}, {"se", e.mass_se[l]}, {"analytic", law.masses[l]}});
    j["masses"] = masses;
    j["provenance"] = prov;
    const std::string stem = "_L" + std::to_string(L);
    if (o.to_dir()) {
      std::ostringstream ks, ms;
      write_kernel_csv(ks, e);
      o.text("kernel" + stem + ".csv", csv_with_provenance(prov, ks.str()));
      ms << "ell,mass,se,analytic\n";
      char buf[128];
      for (int l = 0; l <= lmax; ++l) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", l, e.masses[l], e.mass_se[l], law.masses[l]);
        ms << buf;
      }
      o.text("empirical" + stem + ".csv", csv_with_provenance(prov, ms.str()));
      o.text("compare" + stem + ".json", j.dump(2) + "\n");
    }
    summary.push_back(std::move(j));
  }
  if (!o.to_dir()) o.text("", summary.dump(2) + "\n");
  o.finish();
  return 0;
}

int cmd_reproduce(RunConfig c, std::ostream& out) {
  std::vector<std::string> acts = {"relu", "tanh"};
  if (!c.activation.empty()) acts = {c.activation};
  const int lmax = c.lmax >= 0 ? c.lmax : 128;
  auto [n_lat, n_lon] = parse_grid(c.grid, lmax);
  Output o(c, out);
  json doc = json::object();
  std::ostringstream extrema;
  extrema << "activation,L,seeds,mean_min,mean_max,mean_range\n";
  for (const auto& name : acts) {
    RunConfig rc = c;
    rc.activation = name;
    rc.act = make_activation(name, name == c.activation ? c.param_map : std::map<std::string, double>{});
    rc.lmax = -1;
    auto k = kernel_for(rc);
    auto reg = classify(k, c.band);
    auto t = support_table(k, rc, default_alphas(c, reg.regime));
    auto prov = provenance(rc, tails_for(k, t.laws));
    o.text("support_" + name + ".csv", csv_with_provenance(prov, support_csv(t)));
    o.text("support_" + name + ".txt", support_text(t));

    LawOptions lo;
    lo.ell_max = lmax;
    auto laws = spectral_laws(k, c.depths, 2, lo);
    json ex = json::array();
    for (const auto& law : laws) {
      double smin = 0, smax = 0;
      for (int s = 0; s < c.seeds; ++s) {
        auto st = field_stats(synthesize(sample_coefficients(law, c.seed + s), n_lat, n_lon));
        smin += st.min;
        smax += st.max;
      }
      smin /= c.seeds;
      smax /= c.seeds;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g,%.17g,%.17g\n", name.c_str(), law.depth, c.seeds, smin, smax,
                    smax - smin);
      extrema << buf;
      ex.push_back({{"L", law.depth}, {"mean_min", smin}, {"mean_max", smax}, {"mean_range", smax - smin}});
    }
    doc[name] = {{"regime", regime_name(reg.regime)}, {"support", support_json(t)}, {"extrema", ex}};
  }
  c.command = "reproduce-tables";
  auto prov = provenance(c);
  o.text("extrema.csv", csv_with_provenance(prov, extrema.str()));
  doc["provenance"] = prov;
  o.text("tables.json", doc.dump(2) + "\n");
  o.finish();
  return 0;
}

void report(std::ostream& err, const std::string& kind, const std::string& msg) {
  err << json{{"error", {{"kind", kind}, {"message", msg}}}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Spectral laws of deep random network kernels on the sphere", "nnspec"};
  app.set_version_flag("--version", NNSPEC_VERSION);
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--activation", c.activation, "activation name");
  app.add_option("--param", c.params, "activation parameter KEY=VAL (repeatable)");
  app.add_option("--gamma-b", c.gamma_b, "bias variance share in [0, 1)");
  app.add_option("--d", c.d, "sphere dimension (S^d)");
  app.add_option("--depth", c.depths, "depth L (repeatable)");
  app.add_option("--alpha", c.alphas, "effective-support level (repeatable)");
  app.add_option("--lmax", c.lmax, "fixed truncation ell_max");
  app.add_option("--tail-target", c.tail_target, "grow ell_max until the tail mass is below this");
  app.add_option("--seed", c.seed, "master seed");
  app.add_option("--width", c.width, "hidden width for simulate");
  app.add_option("--replicas", c.replicas, "Monte Carlo replicas for simulate");
  app.add_option("--grid", c.grid, "field grid NxM (rows x columns)");
  app.add_option("--out", c.out, "output directory");
  app.add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--render", c.render, "ppm or png")->check(CLI::IsMember({"ppm", "png"}));
  app.add_option("--image-width", c.image_width, "raster width in pixels");
  app.add_option("--k-max", c.k_max, "highest moment order reported");
  app.add_option("--identity-s", c.identity_s, "identity orders 1..s (0: up to min(3, smoothness))");
  app.add_option("--law", c.law_file, "spectrum JSON written by the spectrum command");
  app.add_option("--band", c.band, "tolerance around kappa'(1) = 1");
  app.add_option("--seeds", c.seeds, "field realizations per table cell");

  app.add_subcommand("classify", "regime of the activation");
  app.add_subcommand("spectrum", "spectral law per depth");
  app.add_subcommand("moments", "moments and the moment-derivative identity");
  app.add_subcommand("support", "effective support and dimension table");
  app.add_subcommand("synth", "field realizations, grid files and Mollweide rasters");
  app.add_subcommand("simulate", "finite-width Monte Carlo against the analytic law");
  app.add_subcommand("reproduce-tables", "support and extrema tables for relu and tanh");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << NNSPEC_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", e.what());
    return 2;
  }

  try {
    c.command = app.get_subcommands().front()->get_name();
    const bool needs_activation = c.command != "reproduce-tables" && !(c.command == "moments" && !c.law_file.empty());
    if (needs_activation && c.activation.empty()) throw UsageError("--activation is required");
    c.param_map = parse_params(c.params);
    if (!c.activation.empty()) c.act = make_activation(c.activation, c.param_map);
    if (c.d < 2) throw UsageError("--d must be >= 2");
    if (!(c.gamma_b >= 0 && c.gamma_b < 1)) throw UsageError("--gamma-b must lie in [0, 1)");
    if (c.depths.empty()) c.depths = (c.command == "synth" || c.command == "simulate") ? std::vector<int>{1} : kTableDepths;
    for (int L : c.depths)
      if (L < 1) throw UsageError("--depth must be >= 1");
    for (double a : c.alphas)
      if (!(a > 0 && a < 1)) throw UsageError("--alpha must lie in (0, 1)");
    if (c.seeds < 1) throw UsageError("--seeds must be >= 1");

    if (c.command == "classify") return cmd_classify(c, out);
    if (c.command == "spectrum") return cmd_spectrum(c, out);
    if (c.command == "moments") return cmd_moments(c, out);
    if (c.command == "support") return cmd_support(c, out);
    if (c.command == "synth") return cmd_synth(c, out, err);
    if (c.command == "simulate") return cmd_simulate(c, out);
    return cmd_reproduce(c, out);
  } catch (const UsageError& e) {
    report(err, e.kind(), e.what());
    return 2;
  } catch (const DomainError& e) {
    report(err, e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    report(err, e.kind(), e.what());
    return 1;
  } catch (const json::exception& e) {
    report(err, "usage", std::string("malformed JSON input: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    report(err, "internal", e.what());
    return 1;
  }
}

}  // namespace nnspec

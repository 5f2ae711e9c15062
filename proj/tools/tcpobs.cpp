// tcpobs command-line front end.
//
// Exit codes: 0 ok, 1 validation/input error, 2 no certified gain,
// 3 numerical failure.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <sstream>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tcpobs/io.hpp"
#include "tcpobs/observer.hpp"
#include "tcpobs/pipeline.hpp"
#include "tcpobs/scenario.hpp"

namespace fs = std::filesystem;
using namespace tcpobs;

namespace {

enum Exit { kOk = 0, kValidation = 1, kInfeasible = 2, kNumerical = 3 };

struct Overrides {
  std::string out;
  std::optional<double> eps, theta, hold, step, decay;
};

int classify(const std::exception_ptr& ep, std::string& msg) {
  try {
    std::rethrow_exception(ep);
  } catch (const SynthesisFailure& e) {
    msg = e.what();
    return kInfeasible;
  } catch (const NumericalError& e) {
    msg = std::string("numerical failure: ") + e.what();
    return kNumerical;
  } catch (const ValidationError& e) {
    msg = std::string("invalid input: ") + e.what();
    return kValidation;
  } catch (const std::exception& e) {
    msg = std::string("error: ") + e.what();
    return kValidation;
  }
}

Scenario load(const std::string& path, const Overrides& ov) {
  Scenario s = load_scenario(path);
  if (ov.eps) s.observer.epsilon = *ov.eps;
  if (ov.theta) s.observer.threshold = *ov.theta;
  if (ov.hold) s.observer.hold = *ov.hold;
  if (ov.step) s.step = *ov.step;
  if (ov.decay) s.observer.decay_rate = *ov.decay;
  if (!(s.observer.epsilon > 0.0)) throw ValidationError("eps must be positive");
  if (!(s.step > 0.0)) throw ValidationError("step must be positive");
  if (s.observer.threshold && !(*s.observer.threshold > 0.0))
    throw ValidationError("theta must be positive");
  if (!(s.observer.hold >= 0.0)) throw ValidationError("hold must be >= 0");
  return s;
}

fs::path out_dir(const std::string& scenario_path, const Scenario& s, const Overrides& ov) {
  if (!ov.out.empty()) return ov.out;
  if (!s.output_dir.empty()) return s.output_dir;
  return fs::path("out") / fs::path(scenario_path).stem();
}

int guarded(const std::function<int()>& fn, const std::string& tag = {}) {
  try {
    return fn();
  } catch (...) {
    std::string msg;
    const int code = classify(std::current_exception(), msg);
    std::cerr << (tag.empty() ? "" : tag + ": ") << msg << "\n";
    return code;
  }
}

int cmd_equilibrium(const std::string& path, const Overrides& ov) {
  const Scenario s = load(path, ov);
  const Prepared p = prepare(s);
  const fs::path dir = out_dir(path, s, ov);
  write_equilibrium(p, dir);
  std::cout << equilibrium_csv(p);
  return kOk;
}

int cmd_linearize(const std::string& path, const Overrides& ov) {
  const Scenario s = load(path, ov);
  const Prepared p = prepare(s);
  const Models m = build_models(p);
  const fs::path dir = out_dir(path, s, ov);
  write_equilibrium(p, dir);
  write_models(m, dir);
  std::cout << "A =\n" << io::matrix_csv(m.aug.A) << "Ad =\n" << io::matrix_csv(m.aug.Ad)
            << "B =\n" << io::matrix_csv(m.aug.B) << "matrices written to " << dir.string() << "\n";
  return kOk;
}

int cmd_synthesize(const std::string& path, const Overrides& ov, const std::string& sdpa) {
  const Scenario s = load(path, ov);
  const Prepared p = prepare(s);
  const Models m = build_models(p);
  const fs::path dir = out_dir(path, s, ov);
  if (!sdpa.empty()) {
    std::ostringstream os;
    LmiProblem(with_decay_rate(m.aug, s.observer.decay_rate)).write_sdpa(os, s.observer.epsilon);
    io::write_atomic(sdpa, os.str());
  }
  const SynthesisResult r = obtain_gain(s, m.aug);
  write_synthesis(m, r, s.observer.gain.has_value(), dir);
  std::cout << synthesis_summary(r, check_certificate(m.aug, r), s.observer.gain.has_value());
  if (r.feasible()) std::cout << "L = [" << r.L.transpose() << "]\n";
  if (r.status == SynthesisStatus::NumericalFailure) return kNumerical;
  return r.feasible() ? kOk : kInfeasible;
}

int run_one(const std::string& path, const fs::path& dir, const Overrides& ov, bool quiet) {
  const Scenario s = load(path, ov);
  const RunResult r = run_scenario(s, dir);
  if (!quiet) {
    std::cout << "L = [" << r.synthesis.L.transpose() << "]\n" << alarms_text(r.alarms)
              << "artifacts in " << dir.string() << "\n";
  }
  return kOk;
}

int cmd_run(const std::string& path, const std::string& batch, const Overrides& ov, int jobs) {
  if (batch.empty()) {
    const Scenario s = load(path, ov);
    return run_one(path, out_dir(path, s, ov), ov, false);
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(batch))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no .json scenarios in " + batch);
  const fs::path root = ov.out.empty() ? fs::path("out") : fs::path(ov.out);

  std::vector<int> codes(files.size(), kOk);
  std::vector<std::string> notes(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < files.size();) {
      try {
        codes[i] = run_one(files[i].string(), root / files[i].stem(), ov, true);
        notes[i] = "ok";
      } catch (...) {
        codes[i] = classify(std::current_exception(), notes[i]);
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(files.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int worst = kOk;
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::cout << files[i].filename().string() << ": exit " << codes[i] << " (" << notes[i] << ")\n";
    worst = std::max(worst, codes[i]);
  }
  return worst;
}

int cmd_detect(const std::string& csv, const std::string& column, const Overrides& ov) {
  const io::Table t = io::parse_csv(io::read_file(csv));
  const int ct = t.column("t");
  const int cd = t.column(column);
  if (ct < 0 || cd < 0) throw ValidationError("CSV needs columns 't' and '" + column + "'");
  if (t.rows.size() < 2) throw ValidationError("CSV needs at least two rows");
  if (!ov.theta) throw ValidationError("detect needs --theta");
  std::vector<double> d;
  const double step = t.rows[1][ct] - t.rows[0][ct];
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const double expect = t.rows[0][ct] + static_cast<double>(k) * step;
    if (std::abs(t.rows[k][ct] - expect) > 1e-6 * std::max(1.0, std::abs(expect)) &&
        k + 1 != t.rows.size())
      throw ValidationError("time column is not uniformly sampled");
    d.push_back(t.rows[k][cd]);
  }
  AlarmReport rep = detect_anomalies(d, step, *ov.theta, ov.hold.value_or(1.0));
  for (auto& iv : rep.intervals) {
    iv.onset += t.rows[0][ct];
    iv.clear += t.rows[0][ct];
  }
  const fs::path dir = ov.out.empty() ? fs::path(csv).parent_path() : fs::path(ov.out);
  io::write_atomic(dir / "alarms_detect.csv", alarms_csv(rep));
  std::cout << alarms_text(rep);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fluid TCP/AQM observer laboratory"};
  app.require_subcommand(1);
  Overrides ov;
  double eps = 0, theta = 0, hold = 0, step = 0, decay = 0;

  auto common = [&](CLI::App* sc) {
    sc->add_option("-o,--out", ov.out, "output directory");
    sc->add_option("--eps", eps, "LMI margin epsilon");
    sc->add_option("--theta", theta, "alarm threshold on |d estimate| [pkt/s]");
    sc->add_option("--hold", hold, "alarm dwell time [s]");
    sc->add_option("--step", step, "integration step override [s]");
    sc->add_option("--decay-rate", decay, "certified error decay rate [1/s]");
  };

  std::string scenario, batch, csv, column = "dhat", sdpa;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  auto* eq = app.add_subcommand("equilibrium", "compute the operating point");
  eq->add_option("scenario", scenario, "scenario JSON")->required();
  common(eq);
  auto* lin = app.add_subcommand("linearize", "write the linearized and augmented matrices");
  lin->add_option("scenario", scenario, "scenario JSON")->required();
  common(lin);
  auto* syn = app.add_subcommand("synthesize", "solve for a certified observer gain");
  syn->add_option("scenario", scenario, "scenario JSON")->required();
  syn->add_option("--sdpa", sdpa, "also export the LMI in SDPA sparse format");
  common(syn);
  auto* run = app.add_subcommand("run", "closed-loop simulation, detection and report");
  run->add_option("scenario", scenario, "scenario JSON");
  run->add_option("--batch", batch, "run every *.json in a directory in parallel");
  run->add_option("-j,--jobs", jobs, "parallel scenarios in batch mode");
  common(run);
  auto* det = app.add_subcommand("detect", "re-threshold a d estimate column of a trace CSV");
  det->add_option("csv", csv, "trace CSV with a time column 't'")->required();
  det->add_option("--column", column, "column holding the estimate");
  common(det);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  auto set = [](CLI::App* sc, const char* name, double v, std::optional<double>& dst) {
    if (sc->count(name)) dst = v;
  };
  for (auto* sc : {eq, lin, syn, run, det}) {
    if (!sc->parsed()) continue;
    set(sc, "--eps", eps, ov.eps);
    set(sc, "--theta", theta, ov.theta);
    set(sc, "--hold", hold, ov.hold);
    set(sc, "--step", step, ov.step);
    set(sc, "--decay-rate", decay, ov.decay);
  }

  if (eq->parsed()) return guarded([&] { return cmd_equilibrium(scenario, ov); });
  if (lin->parsed()) return guarded([&] { return cmd_linearize(scenario, ov); });
  if (syn->parsed()) return guarded([&] { return cmd_synthesize(scenario, ov, sdpa); });
  if (run->parsed()) {
    if (scenario.empty() == batch.empty()) {
      std::cerr << "run needs exactly one of <scenario> or --batch <dir>\n";
      return kValidation;
    }
    return guarded([&] { return cmd_run(scenario, batch, ov, jobs); });
  }
  if (det->parsed()) return guarded([&] { return cmd_detect(csv, column, ov); });
  return kValidation;
}

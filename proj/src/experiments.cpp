#include "difattack/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "difattack/rng.hpp"
#include "difattack/whitebox.hpp"

namespace difattack {

namespace {

const char* const kDash = "\xE2\x80\x94";  // shown when a mean has no samples

int worker_count(int requested, int jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(1, jobs));
}

// Dataset indices to attack, plus those counted as successes without attacking.
struct WorkList {
  std::vector<int> attack;
  std::vector<int> counted;
};

WorkList select_images(const Victim& victim, const Dataset& data, const EvalConfig& cfg) {
  const AttackConfig& a = cfg.attack;
  std::vector<int> eligible;
  for (int i = 0; i < data.size(); ++i) {
    if (a.v == 1 && data.labels[static_cast<std::size_t>(i)] == a.target) continue;
    eligible.push_back(i);
  }
  WorkList w;
  if (cfg.preclassified == Preclassified::Attack) {
    eligible.resize(std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(cfg.max_images)));
    w.attack = std::move(eligible);
    return w;
  }
  // Clean predictions come from a separate oracle and are not charged to any attack.
  auto probe = victim.make_oracle();
  std::size_t next = 0;
  const int want = cfg.max_images;
  while (static_cast<int>(w.attack.size() + w.counted.size()) < want && next < eligible.size()) {
    const std::size_t n = std::min<std::size_t>(eligible.size() - next, 100);
    std::vector<int> chunk(eligible.begin() + static_cast<long>(next), eligible.begin() + static_cast<long>(next + n));
    next += n;
    const Tensor scores = probe->query(data.gather(chunk));
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      if (static_cast<int>(w.attack.size() + w.counted.size()) >= want) break;
      const int pred = argmax_row(scores, static_cast<int>(j));
      const int y = data.labels[static_cast<std::size_t>(chunk[j])];
      const bool already = a.v == 1 ? pred == a.target : pred != y;
      if (!already) {
        w.attack.push_back(chunk[j]);
      } else if (cfg.preclassified == Preclassified::Count) {
        w.counted.push_back(chunk[j]);
      }
    }
  }
  return w;
}

ImageOutcome attack_one(Method method, ScoreOracle& worker_oracle, const Dataset& data, int index,
                        const EvalConfig& cfg, const AutoencoderG* g) {
  AttackConfig a = cfg.attack;
  a.seed = derive_seed(cfg.attack.seed, static_cast<std::uint64_t>(index));
  const Tensor x = data.image(index);
  const int y = data.labels[static_cast<std::size_t>(index)];

  std::optional<ConstraintCheckingOracle> checked;
  ScoreOracle* oracle = &worker_oracle;
  if (cfg.check_constraints) {
    checked.emplace(worker_oracle, x, a.epsilon);
    oracle = &*checked;
  }
  oracle->arm_budget(oracle->queries() + a.Q);

  ImageOutcome out;
  out.index = index;
  AttackResult r;
  try {
    r = method == Method::DifAttack ? run_difattack(x, y, a, *oracle, *g) : run_pixel_nes_baseline(x, y, a, *oracle);
  } catch (const AttackAborted& e) {
    r = e.partial();
    out.aborted = true;
  }
  oracle->disarm_budget();
  if (r.queries > a.Q) throw std::logic_error("attack spent more than its query budget");
  out.success = r.success;
  out.queries = r.queries;
  out.linf = linf_distance(r.adversarial, x);
  out.l2 = l2_distance(r.adversarial, x);
  out.trace = std::move(r.trace);
  return out;
}

void write_traces(const std::string& dir, const std::string& method, const std::string& victim,
                  const std::vector<ImageOutcome>& outcomes) {
  std::filesystem::create_directories(dir);
  std::ofstream f(std::filesystem::path(dir) / (method + "-" + victim + ".jsonl"));
  if (!f) throw std::runtime_error("cannot write traces into " + dir);
  for (const auto& o : outcomes) {
    nlohmann::json j{{"image_id", o.index}, {"success", o.success},   {"queries", o.queries},
                     {"linf", o.linf},      {"l2", o.l2},             {"preclassified", o.preclassified},
                     {"aborted", o.aborted}, {"iterations", nlohmann::json::array()}};
    for (const auto& p : o.trace) j["iterations"].push_back({{"q", p.q}, {"best_loss", p.best_loss}});
    f << j.dump() << '\n';
  }
}

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v, int precision) { return v ? fmt(*v, precision) : kDash; }

std::vector<std::pair<std::string, std::string>> echo(const EvalConfig& cfg) {
  const AttackConfig& a = cfg.attack;
  return {{"Q", std::to_string(a.Q)},
          {"epsilon", fmt(a.epsilon, 6)},
          {"eta", fmt(a.eta, 6)},
          {"sigma", fmt(a.sigma, 6)},
          {"tau", std::to_string(a.tau)},
          {"k", fmt(a.k, 3)},
          {"targeted", a.v == 1 ? std::to_string(a.target) : "no"},
          {"seed", std::to_string(a.seed)},
          {"max_images", std::to_string(cfg.max_images)},
          {"preclassified", cfg.preclassified == Preclassified::Skip    ? "skip"
                            : cfg.preclassified == Preclassified::Count ? "count"
                                                                        : "attack"}};
}

std::string cache_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

const char* to_string(Method m) { return m == Method::DifAttack ? "difattack" : "nes"; }

Method method_from_string(const std::string& s) {
  if (s == "difattack") return Method::DifAttack;
  if (s == "nes" || s == "nes-baseline") return Method::NesBaseline;
  throw std::invalid_argument("unknown method '" + s + "' (difattack or nes)");
}

Victim in_process_victim(const ClassifierSpec& c, ScoreMode mode) {
  return {c.id, [c, mode] { return std::make_unique<InProcessOracle>(c, mode); }};
}

EvalRow summarise(const std::string& method, const std::string& victim, const std::vector<ImageOutcome>& outcomes) {
  EvalRow row;
  row.method = method;
  row.victim = victim;
  row.images = static_cast<int>(outcomes.size());
  double q = 0, linf = 0, l2 = 0;
  for (const auto& o : outcomes) {
    if (!o.success) continue;
    ++row.successes;
    q += static_cast<double>(o.queries);
    linf += o.linf;
    l2 += o.l2;
  }
  row.asr = row.images ? 100.0 * row.successes / row.images : 0.0;
  if (row.successes) {
    row.avg_q = q / row.successes;
    row.mean_linf = linf / row.successes;
    row.mean_l2 = l2 / row.successes;
  }
  return row;
}

EvalReport evaluate_attack(Method method, const std::vector<Victim>& victims, const Dataset& data,
                           const EvalConfig& cfg, const AutoencoderG* g) {
  cfg.attack.validate();
  if (method == Method::DifAttack && !g) throw std::invalid_argument("difattack needs an autoencoder");
  if (cfg.max_images < 0) throw std::invalid_argument("max_images must be non-negative");
  EvalReport report;
  report.title = std::string(to_string(method)) + (cfg.attack.v == 1 ? " targeted" : " untargeted");
  report.config = echo(cfg);

  for (const Victim& victim : victims) {
    const WorkList work = select_images(victim, data, cfg);
    std::vector<ImageOutcome> outcomes(work.attack.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
      try {
        auto oracle = victim.make_oracle();
        for (std::size_t i = next++; i < work.attack.size(); i = next++) {
          outcomes[i] = attack_one(method, *oracle, data, work.attack[i], cfg, g);
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = work.attack.size();
      }
    };
    const int n = worker_count(cfg.workers, static_cast<int>(work.attack.size()));
    if (n == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < n; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (int idx : work.counted) {
      ImageOutcome o;
      o.index = idx;
      o.success = true;
      o.preclassified = true;
      outcomes.push_back(o);
    }
    std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    if (!cfg.trace_dir.empty()) write_traces(cfg.trace_dir, to_string(method), victim.name, outcomes);
    report.rows.push_back(summarise(to_string(method), victim.name, outcomes));
    report.outcomes.push_back(std::move(outcomes));
  }
  return report;
}

void check_open_set(const Dataset& train_a, const Dataset& eval_b) {
  for (const ClassKey& a : train_a.classes)
    for (const ClassKey& b : eval_b.classes)
      if (a == b) {
        throw std::invalid_argument("class universes overlap: shape " + std::to_string(a.shape) + " palette " +
                                    std::to_string(a.palette) + " is in both");
      }
  std::set<std::uint64_t> seen;
  for (int i = 0; i < train_a.size(); ++i) seen.insert(image_hash(train_a, i));
  for (int i = 0; i < eval_b.size(); ++i)
    if (seen.count(image_hash(eval_b, i))) {
      throw std::invalid_argument("evaluation image " + std::to_string(i) + " also appears in the training set");
    }
}

EvalReport open_set_eval(const AutoencoderG& g, const Dataset& train_a, const ClassifierSpec& victim_b,
                         const Dataset& eval_b, const EvalConfig& cfg) {
  check_open_set(train_a, eval_b);
  const std::vector<Victim> victims{in_process_victim(victim_b)};
  EvalReport report = evaluate_attack(Method::DifAttack, victims, eval_b, cfg, &g);
  EvalReport base = evaluate_attack(Method::NesBaseline, victims, eval_b, cfg);
  report.title = "open-set";
  report.rows.push_back(base.rows.front());
  report.outcomes.push_back(std::move(base.outcomes.front()));
  return report;
}

AutoencoderG obtain_autoencoder(const AblationSetup& s, const std::string& variant, DfMode mode, WhiteBoxMethod wb) {
  const std::string name = "ae-" + variant + "-" + to_string(wb) + "-" + std::to_string(s.ae_seed) + "-" + std::to_string(s.train_cfg.seed) +
                           "-e" + std::to_string(s.train_cfg.epochs) + ".difw";
  if (!s.cache_dir.empty() && std::filesystem::exists(cache_path(s.cache_dir, name))) {
    return load_autoencoder(cache_path(s.cache_dir, name));
  }
  if (!s.train) throw std::invalid_argument("no training data for autoencoder '" + variant + "'");
  AutoencoderG g = make_autoencoder(s.ae, s.ae_seed, mode);
  TrainConfig tc = s.train_cfg;
  tc.whitebox.method = wb;
  train_autoencoder(g, *s.train, s.zoo, tc);
  if (!s.cache_dir.empty()) {
    std::filesystem::create_directories(s.cache_dir);
    save_autoencoder(cache_path(s.cache_dir, name), g);
  }
  return g;
}

double mean_reconstruction_l2(const AutoencoderG& g, const Dataset& data, int max_images, int batch_size) {
  const int n = std::min(max_images, data.size());
  if (n <= 0) throw std::invalid_argument("no images to reconstruct");
  double total = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    const Tensor x = data.images.slice_rows(start, start + b);
    const Tensor r = reconstruct(g, x);
    for (int i = 0; i < b; ++i) total += l2_distance(r.row(i), x.row(i));
  }
  return total / n;
}

DfAblation ablation_df(const AblationSetup& s) {
  if (!s.eval) throw std::invalid_argument("ablation needs an evaluation set");
  const AutoencoderG with = obtain_autoencoder(s, "df", DfMode::Learned, s.train_cfg.whitebox.method);
  const AutoencoderG without = obtain_autoencoder(s, "nodf", DfMode::RandomSplit, s.train_cfg.whitebox.method);
  DfAblation out;
  out.recon_with_df = mean_reconstruction_l2(with, *s.eval, s.recon_images);
  out.recon_without_df = mean_reconstruction_l2(without, *s.eval, s.recon_images);
  const std::vector<Victim> victims{in_process_victim(s.victim)};
  out.report = evaluate_attack(Method::DifAttack, victims, *s.eval, s.eval_cfg, &with);
  EvalReport b = evaluate_attack(Method::DifAttack, victims, *s.eval, s.eval_cfg, &without);
  out.report.title = "DF ablation";
  out.report.rows.front().method = "w/ DF";
  b.rows.front().method = "w/o DF";
  out.report.rows.push_back(b.rows.front());
  out.report.outcomes.push_back(std::move(b.outcomes.front()));
  return out;
}

std::vector<TauRow> ablation_tau(const AutoencoderG& g, const ClassifierSpec& victim, const Dataset& eval,
                                 const EvalConfig& cfg, const std::vector<int>& grid) {
  std::vector<TauRow> rows;
  for (int tau : grid) {
    EvalConfig c = cfg;
    c.attack.tau = tau;
    EvalReport r = evaluate_attack(Method::DifAttack, {in_process_victim(victim)}, eval, c, &g);
    rows.push_back({tau, r.rows.front()});
    rows.back().row.method = "tau=" + std::to_string(tau);
  }
  return rows;
}

EvalReport ablation_whitebox(const AblationSetup& s) {
  if (!s.eval) throw std::invalid_argument("ablation needs an evaluation set");
  EvalReport report;
  report.title = "white-box pair ablation";
  report.config = echo(s.eval_cfg);
  const std::vector<Victim> victims{in_process_victim(s.victim)};
  for (WhiteBoxMethod m : {WhiteBoxMethod::Pgd, WhiteBoxMethod::Mifgsm, WhiteBoxMethod::Mixed}) {
    const AutoencoderG g = obtain_autoencoder(s, "df", DfMode::Learned, m);
    EvalReport r = evaluate_attack(Method::DifAttack, victims, *s.eval, s.eval_cfg, &g);
    r.rows.front().method = std::string("G w/ ") + to_string(m);
    report.rows.push_back(r.rows.front());
    report.outcomes.push_back(std::move(r.outcomes.front()));
  }
  return report;
}

ClassifierSpec obtain_classifier(const std::string& id, const Dataset& train, int num_classes, std::uint64_t seed,
                                 const ClassifierTrainConfig& cfg, const std::string& cache_dir) {
  const std::string name = "clf-" + id + "-" + std::to_string(seed) + "-" + std::to_string(cfg.seed) + ".difw";
  if (!cache_dir.empty() && std::filesystem::exists(cache_path(cache_dir, name))) {
    return load_classifier(cache_path(cache_dir, name));
  }
  ClassifierSpec c = make_classifier(id, train.image_shape(), num_classes, seed);
  train_classifier(c, train, cfg);
  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    save_classifier(cache_path(cache_dir, name), c);
  }
  return c;
}

const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> m{"ASR (%)", "Avg.Q", "mean linf", "mean l2"};
  return m;
}

std::string render_report(const EvalReport& r, ReportFormat f) {
  std::ostringstream os;
  if (f == ReportFormat::Csv) {
    os << "method,victim,images,successes,asr,avg_q,mean_linf,mean_l2\n";
    for (const auto& row : r.rows) {
      os << row.method << ',' << row.victim << ',' << row.images << ',' << row.successes << ',' << fmt(row.asr, 6)
         << ',' << fmt(row.avg_q, 6) << ',' << fmt(row.mean_linf, 8) << ',' << fmt(row.mean_l2, 8) << '\n';
    }
    return os.str();
  }
  if (!r.title.empty()) os << "### " << r.title << "\n\n";
  os << "| run |";
  for (const auto& m : report_metrics()) os << ' ' << m << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < report_metrics().size(); ++i) os << "---:|";
  os << '\n';
  for (const auto& row : r.rows) {
    os << "| " << row.method << " @ " << row.victim << " | " << fmt(row.asr, 1) << " | " << fmt(row.avg_q, 1)
       << " | " << fmt(row.mean_linf, 4) << " | " << fmt(row.mean_l2, 3) << " |\n";
  }
  if (!r.rows.empty()) {
    os << "\nAvg.Q is the mean query count over successful attacks only.";
    if (!r.config.empty()) {
      os << " Config:";
      for (const auto& [k, v] : r.config) os << ' ' << k << '=' << v;
    }
    os << '\n';
  }
  return os.str();
}

void write_report(const std::string& path, const EvalReport& r, ReportFormat f) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report to " + path);
  out << render_report(r, f);
}

std::vector<EvalRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<EvalRow> rows;
  bool header = true;
  int line_no = 0;
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s == kDash) return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw std::invalid_argument("report line " + std::to_string(line_no) + " has " +
                                                       std::to_string(cells.size()) + " cells, expected 8");
    EvalRow row{cells[0], cells[1], std::stoi(cells[2]), std::stoi(cells[3]), std::stod(cells[4]), opt(cells[5]),
                opt(cells[6]), opt(cells[7])};
    rows.push_back(row);
  }
  return rows;
}

}  // namespace difattack

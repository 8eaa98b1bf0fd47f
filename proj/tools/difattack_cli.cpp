// Command-line front end: train the zoo and G, attack, serve a victim, run the
// ablations and render reports. Every subcommand honours --seed and --config.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "difattack/desk.hpp"
#include "difattack/remote.hpp"
#include "difattack/rng.hpp"

using namespace difattack;

namespace {

volatile std::sig_atomic_t g_stop = 0;

struct Common {
  DeskConfig desk;
  std::string workdir = "artifacts";
  int images = 100;
  int workers = 0;
  std::string out;  // report path; format from the extension
  std::string traces;
};

struct AttackFlags {
  std::string method = "difattack";
  int targeted = -1;
  long q = 10000;
  float eps = 8.0f / 255.0f;
  int tau = -1;
  float sigma = 0.1f;
  float eta = 0.01f;
  float k = -1.0f;
  bool raw_losses = false;
  std::string preclassified = "skip";
  bool count_preclassified = false;
  std::string remote;
  std::string ae;
};

ReportFormat format_for(const std::string& path) {
  return std::filesystem::path(path).extension() == ".csv" ? ReportFormat::Csv : ReportFormat::Markdown;
}

void emit(const Common& c, const EvalReport& r) {
  std::cout << render_report(r, ReportFormat::Markdown);
  if (!c.out.empty()) {
    write_report(c.out, r, format_for(c.out));
    std::cout << "wrote " << c.out << '\n';
  }
}

DeskConfig desk_of(const Common& c) {
  DeskConfig d = c.desk;
  d.cache_dir = c.workdir;
  return d;
}

EvalConfig eval_config(const Common& c, const AttackFlags& f) {
  EvalConfig e;
  e.attack = f.targeted >= 0 ? AttackConfig::targeted(f.targeted) : AttackConfig::untargeted();
  e.attack.Q = f.q;
  e.attack.epsilon = f.eps;
  if (f.tau > 0) e.attack.tau = f.tau;
  if (f.k >= 0) e.attack.k = f.k;
  e.attack.sigma = f.sigma;
  e.attack.eta = f.eta;
  e.attack.seed = derive_seed(c.desk.seed, 40);
  e.attack.normalize_losses = !f.raw_losses;
  e.attack.validate();
  e.max_images = c.images;
  e.workers = c.workers;
  e.trace_dir = c.traces;
  if (f.count_preclassified) {
    e.preclassified = Preclassified::Count;
  } else if (f.preclassified == "skip") {
    e.preclassified = Preclassified::Skip;
  } else if (f.preclassified == "count") {
    e.preclassified = Preclassified::Count;
  } else if (f.preclassified == "attack") {
    e.preclassified = Preclassified::Attack;
  } else {
    throw CLI::ValidationError("--preclassified", "expected skip, count or attack");
  }
  return e;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--images", c.images, "Images to attack, in dataset order")->capture_default_str();
  sub->add_option("--workers", c.workers, "Attack worker threads (0: all cores)");
  sub->add_option("--out", c.out, "Report file (.csv or .md)");
  sub->add_option("--traces", c.traces, "Directory for per-image JSONL traces");
}

void add_attack_flags(CLI::App* sub, AttackFlags& f) {
  sub->add_option("--targeted", f.targeted, "Target class (omit for untargeted)");
  sub->add_option("--q", f.q, "Query budget Q")->capture_default_str();
  sub->add_option("--eps", f.eps, "l-infinity radius")->capture_default_str();
  sub->add_option("--tau", f.tau, "Candidates per iteration (default 8, targeted 12)");
  sub->add_option("--sigma", f.sigma, "NES sampling std")->capture_default_str();
  sub->add_option("--eta", f.eta, "NES learning rate")->capture_default_str();
  sub->add_option("--k", f.k, "Margin (default 0, targeted 5)");
  sub->add_flag("--raw-losses", f.raw_losses, "Skip loss standardisation in the update");
  sub->add_option("--preclassified", f.preclassified, "Images already fooled: skip, count or attack")
      ->capture_default_str();
  sub->add_flag("--count-preclassified", f.count_preclassified, "Same as --preclassified count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled-feature black-box attacks at desk scale"};
  app.set_config("--config", "", "key=value config file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  AttackFlags f;
  app.add_option("--seed", c.desk.seed, "Master seed")->capture_default_str();
  app.add_option("--workdir", c.workdir, "Where trained models are cached")->capture_default_str();
  app.add_option("--victim", c.desk.victim, "Held-out victim architecture")->capture_default_str();
  app.add_option("--classes", c.desk.num_classes, "Classes per synthetic universe")->capture_default_str();
  app.add_option("--train-images", c.desk.train_images)->capture_default_str();
  app.add_option("--eval-images", c.desk.eval_images)->capture_default_str();
  app.add_option("--clf-epochs", c.desk.classifier.epochs)->capture_default_str();
  app.add_option("--ae-epochs", c.desk.ae_epochs)->capture_default_str();
  app.add_option("--cifar-train", c.desk.cifar_train, "CIFAR binary batch replacing universe A training data");
  app.add_option("--cifar-eval", c.desk.cifar_eval, "CIFAR binary batch replacing universe A evaluation data");

  // train-zoo
  auto* zoo_cmd = app.add_subcommand("train-zoo", "Train every classifier on a universe");
  std::string universe = "A";
  zoo_cmd->add_option("--universe", universe)->check(CLI::IsMember({"A", "B"}))->capture_default_str();

  // train-ae
  auto* ae_cmd = app.add_subcommand("train-ae", "Train the autoencoder G against the surrogates");
  bool no_df = false;
  std::string whitebox = "pgd";
  std::string curve;
  ae_cmd->add_flag("--no-df", no_df, "Random channel split instead of the learned DF module");
  ae_cmd->add_option("--whitebox", whitebox, "Pair generator")->check(CLI::IsMember({"pgd", "mifgsm", "mixed"}));
  ae_cmd->add_option("--curve", curve, "CSV of per-epoch losses");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Attack the victim and report ASR and Avg.Q");
  attack_cmd->add_option("--method", f.method)->check(CLI::IsMember({"difattack", "nes"}))->capture_default_str();
  attack_cmd->add_option("--remote", f.remote, "host:port of a score server instead of the local victim");
  attack_cmd->add_option("--ae", f.ae, "Autoencoder checkpoint (default: the cached one)");
  add_common(attack_cmd, c);
  add_attack_flags(attack_cmd, f);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve a classifier over TCP");
  std::string checkpoint, bind = "127.0.0.1:7070", mode = "logits";
  serve_cmd->add_option("--checkpoint", checkpoint, "Classifier checkpoint")->required();
  serve_cmd->add_option("--bind", bind)->capture_default_str();
  serve_cmd->add_option("--mode", mode)->check(CLI::IsMember({"logits", "probs"}))->capture_default_str();

  // sensitivity
  auto* sens_cmd = app.add_subcommand("sensitivity", "Victim error under noise on z_a versus z_v");
  std::vector<float> xi_grid{0.5f, 1.0f, 2.0f, 4.0f, 8.0f};
  sens_cmd->add_option("--xi-grid", xi_grid, "Noise levels as multiples of the latent std")->delimiter(',');
  add_common(sens_cmd, c);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "DF, tau or white-box ablations");
  std::string which;
  std::vector<int> tau_grid{2, 4, 8, 12, 16, 24};
  ablate_cmd->add_option("which", which)->required()->check(CLI::IsMember({"df", "tau", "whitebox"}));
  ablate_cmd->add_option("--tau-grid", tau_grid)->delimiter(',');
  add_common(ablate_cmd, c);
  add_attack_flags(ablate_cmd, f);

  // open-set
  auto* open_cmd = app.add_subcommand("open-set", "G and surrogates from universe A, victim from B");
  add_common(open_cmd, c);
  add_attack_flags(open_cmd, f);

  // report
  auto* report_cmd = app.add_subcommand("report", "Render CSV reports as markdown (or back to CSV)");
  std::vector<std::string> inputs;
  report_cmd->add_option("inputs", inputs, "CSV reports")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", c.out, "Output file (.md or .csv); stdout when omitted");

  CLI11_PARSE(app, argc, argv);

  try {
    const DeskConfig desk = desk_of(c);
    auto universe_a = [&] {
      Dataset train = desk_dataset(desk, Universe::A, true);
      return train;
    };

    if (*zoo_cmd) {
      const Universe u = universe == "A" ? Universe::A : Universe::B;
      const Dataset train = desk_dataset(desk, u, true), eval = desk_dataset(desk, u, false);
      for (const auto& m : desk_zoo(desk, u, train)) {
        std::cout << m.id << " eval accuracy " << accuracy(m, eval) << '\n';
      }
      return 0;
    }

    if (*serve_cmd) {
      ScoreServer server(load_classifier(checkpoint), mode == "probs" ? ScoreMode::Probabilities : ScoreMode::Logits);
      server.set_log(&std::cerr);
      server.start(bind);
      std::cout << "serving " << checkpoint << " on 127.0.0.1:" << server.port() << std::endl;
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      std::cout << "served " << server.served_images() << " images\n";
      return 0;
    }

    if (*report_cmd) {
      EvalReport merged;
      for (const auto& path : inputs) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        for (auto& row : parse_report_csv(ss.str())) merged.rows.push_back(row);
      }
      const std::string text = render_report(merged, c.out.empty() ? ReportFormat::Markdown : format_for(c.out));
      if (c.out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(c.out) << text;
      }
      return 0;
    }

    const Dataset train = universe_a();
    const Dataset eval = desk_dataset(desk, Universe::A, false);
    const auto zoo = desk_zoo(desk, Universe::A, train);
    EvalConfig ecfg = (*attack_cmd || *ablate_cmd || *open_cmd) ? eval_config(c, f) : EvalConfig{};
    AblationSetup setup = desk_setup(desk, train, eval, zoo, ecfg);

    if (*ae_cmd) {
      setup.train_cfg.curve_csv = curve;
      const std::string variant = no_df ? "nodf" : "df";
      const AutoencoderG g = obtain_autoencoder(setup, variant, no_df ? DfMode::RandomSplit : DfMode::Learned,
                                                whitebox_method_from_string(whitebox));
      std::cout << "mean reconstruction l2 " << mean_reconstruction_l2(g, eval, 100) << '\n';
      return 0;
    }

    if (*attack_cmd) {
      const Method method = method_from_string(f.method);
      AutoencoderG g;
      if (method == Method::DifAttack) g = f.ae.empty() ? desk_autoencoder(setup) : load_autoencoder(f.ae);
      std::vector<Victim> victims;
      if (f.remote.empty()) {
        victims.push_back(in_process_victim(setup.victim));
      } else {
        const std::string address = f.remote;
        victims.push_back({"remote", [address] { return std::unique_ptr<ScoreOracle>(connect(address, -1)); }});
      }
      emit(c, evaluate_attack(method, victims, eval, ecfg, method == Method::DifAttack ? &g : nullptr));
      return 0;
    }

    if (*sens_cmd) {
      const AutoencoderG g = desk_autoencoder(setup);
      const float s0 = feature_std(g, eval);
      std::vector<int> idx;
      for (int i = 0; i < std::min(c.images, eval.size()); ++i) idx.push_back(i);
      const Dataset sub = eval.subset(idx);
      std::cout << "xi_over_sigma0,xi,asr_za,asr_zv\n";
      SensitivityConfig sc;
      sc.seed = derive_seed(desk.seed, 50);
      sc.xi.clear();
      for (float m : xi_grid) sc.xi.push_back(m * s0);
      sc.feature = FeatureKind::Adversarial;
      const auto za = sensitivity_probe(g, setup.victim, sub, sc);
      sc.feature = FeatureKind::Visual;
      const auto zv = sensitivity_probe(g, setup.victim, sub, sc);
      for (std::size_t i = 0; i < xi_grid.size(); ++i) {
        std::cout << xi_grid[i] << ',' << za[i].xi << ',' << za[i].asr << ',' << zv[i].asr << '\n';
      }
      return 0;
    }

    if (*ablate_cmd) {
      if (which == "df") {
        const DfAblation r = ablation_df(setup);
        std::cout << "reconstruction l2: w/ DF " << r.recon_with_df << ", w/o DF " << r.recon_without_df << "\n\n";
        emit(c, r.report);
      } else if (which == "whitebox") {
        emit(c, ablation_whitebox(setup));
      } else {
        const AutoencoderG g = desk_autoencoder(setup);
        EvalReport r;
        r.title = "tau sweep";
        for (const auto& row : ablation_tau(g, setup.victim, eval, ecfg, tau_grid)) r.rows.push_back(row.row);
        emit(c, r);
      }
      return 0;
    }

    if (*open_cmd) {
      const AutoencoderG g = desk_autoencoder(setup);
      const Dataset train_b = desk_dataset(desk, Universe::B, true);
      const Dataset eval_b = desk_dataset(desk, Universe::B, false);
      const auto zoo_b = desk_zoo(desk, Universe::B, train_b);
      emit(c, open_set_eval(g, train, find_classifier(zoo_b, desk.victim), eval_b, ecfg));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

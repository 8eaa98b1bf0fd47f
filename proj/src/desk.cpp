#include "difattack/desk.hpp"

#include <stdexcept>

#include "difattack/rng.hpp"

namespace difattack {

namespace {
std::string universe_dir(const DeskConfig& d, Universe u) {
  if (d.cache_dir.empty()) return "";
  return d.cache_dir + (u == Universe::A ? "/A" : "/B");
}
}  // namespace

Dataset desk_dataset(const DeskConfig& d, Universe u, bool train) {
  if (u == Universe::A && !(train ? d.cifar_train : d.cifar_eval).empty()) {
    return load_cifar_binary(train ? d.cifar_train : d.cifar_eval);
  }
  SynthSpec s;
  s.seed = derive_seed(d.seed, (u == Universe::A ? 0 : 2) + (train ? 0 : 1));
  s.num_classes = d.num_classes;
  s.count = train ? d.train_images : d.eval_images;
  s.universe = u;
  return synth_dataset(s);
}

std::vector<ClassifierSpec> desk_zoo(const DeskConfig& d, Universe u, const Dataset& train) {
  std::vector<ClassifierSpec> zoo;
  const std::uint64_t base = derive_seed(d.seed, u == Universe::A ? 10 : 20);
  for (std::size_t i = 0; i < classifier_ids().size(); ++i) {
    ClassifierTrainConfig cfg = d.classifier;
    cfg.seed = derive_seed(base, 100 + i);
    zoo.push_back(obtain_classifier(classifier_ids()[i], train, train.num_classes, derive_seed(base, i), cfg,
                                    universe_dir(d, u)));
  }
  return zoo;
}

const ClassifierSpec& find_classifier(const std::vector<ClassifierSpec>& zoo, const std::string& id) {
  for (const auto& c : zoo)
    if (c.id == id) return c;
  throw std::invalid_argument("no classifier '" + id + "' in the zoo");
}

std::vector<ClassifierSpec> surrogates(const std::vector<ClassifierSpec>& zoo, const std::string& victim) {
  std::vector<ClassifierSpec> out;
  for (const auto& c : zoo)
    if (c.id != victim) out.push_back(c);
  if (out.empty()) throw std::invalid_argument("no surrogates left once '" + victim + "' is held out");
  return out;
}

AblationSetup desk_setup(const DeskConfig& d, const Dataset& train, const Dataset& eval,
                         const std::vector<ClassifierSpec>& zoo, const EvalConfig& eval_cfg) {
  AblationSetup s;
  s.train = &train;
  s.eval = &eval;
  s.zoo = surrogates(zoo, d.victim);
  s.victim = find_classifier(zoo, d.victim);
  s.ae.image_shape = train.image_shape();
  s.ae_seed = derive_seed(d.seed, 30);
  s.train_cfg.epochs = d.ae_epochs;
  s.train_cfg.seed = derive_seed(d.seed, 31);
  s.eval_cfg = eval_cfg;
  s.cache_dir = universe_dir(d, Universe::A);
  return s;
}

AutoencoderG desk_autoencoder(const AblationSetup& s) {
  return obtain_autoencoder(s, "df", DfMode::Learned, s.train_cfg.whitebox.method);
}

}  // namespace difattack

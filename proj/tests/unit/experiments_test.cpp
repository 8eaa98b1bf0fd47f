#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "difattack/bytes.hpp"
#include "difattack/experiments.hpp"
#include "difattack/rng.hpp"
#include "support/fake_oracles.hpp"

using namespace difattack;

namespace {

// Image i is flat grey at level labels[i] / 10, so a scripted victim can read the label back.
Dataset grey_dataset(const std::vector<int>& labels, int classes) {
  Dataset ds;
  ds.name = "grey";
  ds.num_classes = classes;
  ds.labels = labels;
  ds.images = Tensor(Shape{static_cast<int>(labels.size()), 3, 4, 4});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int j = 0; j < 48; ++j) ds.images[i * 48 + static_cast<std::size_t>(j)] = static_cast<float>(labels[i]) / 10.0f;
  return ds;
}

// Knows the label of a clean image exactly; anything perturbed by more than 0.02 becomes class `fooled`.
Victim reading_victim(int classes, int fooled) {
  return {"reader", [=] {
            return std::make_unique<testing::ScriptedOracle>(classes, [=](const Tensor& img) {
              const float v0 = img[0];
              const int label = static_cast<int>(std::lround(v0 * 10.0f));
              float spread = 0;
              for (float v : img.data()) spread = std::max(spread, std::fabs(v - static_cast<float>(label) / 10.0f));
              std::vector<float> s(static_cast<std::size_t>(classes), 0.0f);
              s[static_cast<std::size_t>(spread > 0.02f ? fooled : label)] = 1.0f;
              return s;
            });
          }};
}

Victim constant_victim(int classes, int winner) {
  return {"constant", [=] { return std::make_unique<testing::ScriptedOracle>(classes, testing::constant_scores(classes, winner)); }};
}

}  // namespace

TEST_CASE("an oracle that always misclassifies gives ASR 100 and Avg.Q = tau") {
  const Dataset ds = grey_dataset({0, 1, 2, 3, 0, 1}, 4);
  EvalConfig cfg;
  cfg.attack.tau = 8;
  cfg.workers = 1;
  cfg.preclassified = Preclassified::Attack;
  const EvalReport r = evaluate_attack(Method::NesBaseline, {constant_victim(4, 3)}, ds, cfg);
  REQUIRE(r.rows.size() == 1);
  // Label-3 images are "fooled" only once they leave class 3, which never happens.
  CHECK(r.rows[0].images == 6);
  CHECK(r.rows[0].successes == 5);
  auto only_others = grey_dataset({0, 1, 2, 0, 1}, 4);
  const EvalRow row = evaluate_attack(Method::NesBaseline, {constant_victim(4, 3)}, only_others, cfg).rows[0];
  CHECK(row.asr == 100.0);
  REQUIRE(row.avg_q);
  CHECK(*row.avg_q == 8.0);
}

TEST_CASE("Q = 0 gives ASR 0 and an undefined Avg.Q shown as a dash") {
  const Dataset ds = grey_dataset({0, 1, 2}, 4);
  EvalConfig cfg;
  cfg.attack.Q = 0;
  cfg.workers = 1;
  const EvalReport r = evaluate_attack(Method::NesBaseline, {reading_victim(4, 3)}, ds, cfg);
  CHECK(r.rows[0].images == 3);
  CHECK(r.rows[0].asr == 0.0);
  CHECK_FALSE(r.rows[0].avg_q);
  CHECK(render_report(r, ReportFormat::Markdown).find("\xE2\x80\x94") != std::string::npos);
}

TEST_CASE("preclassified images are skipped, counted or attacked") {
  // Label 3 reads back as class 3; with a victim that always says 1, labels != 1 are already wrong.
  const Dataset ds = grey_dataset({0, 1, 2, 1}, 4);
  EvalConfig cfg;
  cfg.workers = 1;
  cfg.attack.Q = 80;
  const Victim says_one = constant_victim(4, 1);
  CHECK(evaluate_attack(Method::NesBaseline, {says_one}, ds, cfg).rows[0].images == 2);
  cfg.preclassified = Preclassified::Count;
  const EvalReport counted = evaluate_attack(Method::NesBaseline, {says_one}, ds, cfg);
  CHECK(counted.rows[0].images == 4);
  CHECK(counted.rows[0].successes == 2);
  CHECK(*counted.rows[0].avg_q == 0.0);
  for (const auto& o : counted.outcomes[0]) CHECK(o.preclassified == (ds.labels[static_cast<std::size_t>(o.index)] != 1));
}

TEST_CASE("targeted evaluation never includes images of the target class") {
  const Dataset ds = grey_dataset({0, 1, 2, 3, 0, 2, 0}, 4);
  EvalConfig cfg;
  cfg.attack = AttackConfig::targeted(0);
  cfg.attack.Q = 48;
  cfg.workers = 1;
  const EvalReport r = evaluate_attack(Method::NesBaseline, {reading_victim(4, 0)}, ds, cfg);
  CHECK(r.rows[0].images == 4);
  for (const auto& o : r.outcomes[0]) CHECK(ds.labels[static_cast<std::size_t>(o.index)] != 0);
}

TEST_CASE("worker count does not change the outcome") {
  const Dataset ds = grey_dataset({0, 1, 2, 3, 1, 2, 3, 0}, 4);
  EvalConfig cfg;
  cfg.attack.Q = 200;
  cfg.attack.seed = 11;
  cfg.workers = 1;
  const EvalReport one = evaluate_attack(Method::NesBaseline, {reading_victim(4, 2)}, ds, cfg);
  cfg.workers = 3;
  const EvalReport three = evaluate_attack(Method::NesBaseline, {reading_victim(4, 2)}, ds, cfg);
  CHECK(one.rows == three.rows);
  for (std::size_t i = 0; i < one.outcomes[0].size(); ++i) {
    CHECK(one.outcomes[0][i].queries == three.outcomes[0][i].queries);
    CHECK(one.outcomes[0][i].queries <= cfg.attack.Q);
  }
}

TEST_CASE("traces are written one JSON line per image") {
  const auto dir = std::filesystem::temp_directory_path() / "difattack-trace-test";
  std::filesystem::remove_all(dir);
  const Dataset ds = grey_dataset({0, 1}, 4);
  EvalConfig cfg;
  cfg.workers = 1;
  cfg.trace_dir = dir.string();
  evaluate_attack(Method::NesBaseline, {reading_victim(4, 2)}, ds, cfg);
  std::ifstream in(dir / "nes-reader.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"iterations\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("summaries average queries over successes only") {
  std::vector<ImageOutcome> o(3);
  o[0].success = true;
  o[0].queries = 10;
  o[0].linf = 0.03f;
  o[1].success = true;
  o[1].queries = 30;
  o[1].linf = 0.01f;
  o[2].queries = 10000;
  const EvalRow r = summarise("m", "v", o);
  CHECK(r.asr == doctest::Approx(200.0 / 3));
  CHECK(*r.avg_q == 20.0);
  CHECK(*r.mean_linf == doctest::Approx(0.02));
}

TEST_CASE("report rendering") {
  EvalReport empty;
  const std::string csv = render_report(empty, ReportFormat::Csv);
  CHECK(csv == "method,victim,images,successes,asr,avg_q,mean_linf,mean_l2\n");
  CHECK(parse_report_csv(csv).empty());
  const std::string md = render_report(empty, ReportFormat::Markdown);
  CHECK(std::count(md.begin(), md.end(), '\n') == 2);

  EvalReport r;
  r.rows.push_back({"difattack", "conv3", 100, 97, 97.0, 156.25, 0.03125, 1.5});
  r.rows.push_back({"nes", "conv3", 100, 0, 0.0, std::nullopt, std::nullopt, std::nullopt});
  CHECK(parse_report_csv(render_report(r, ReportFormat::Csv)) == r.rows);

  const std::string table = render_report(r, ReportFormat::Markdown);
  std::istringstream in(table);
  std::string line;
  int table_lines = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] != '|') continue;
    ++table_lines;
    CHECK(std::count(line.begin(), line.end(), '|') == static_cast<long>(report_metrics().size()) + 2);
  }
  CHECK(table_lines == 4);
  CHECK(table.find("successful attacks only") != std::string::npos);
  CHECK_THROWS_AS(parse_report_csv("h\na,b,c\n"), std::invalid_argument);
}

TEST_CASE("open-set checks") {
  const Dataset a = synth_dataset({1, 6, 20, Universe::A});
  const Dataset b = synth_dataset({2, 6, 20, Universe::B});
  CHECK_NOTHROW(check_open_set(a, b));
  const Dataset a2 = synth_dataset({3, 6, 20, Universe::A});
  CHECK_THROWS_WITH_AS(check_open_set(a, a2), doctest::Contains("overlap"), std::invalid_argument);

  std::vector<int> first{0};
  Dataset leak = a.subset(first);
  leak.classes = b.classes;
  CHECK_THROWS_WITH_AS(check_open_set(a, leak), doctest::Contains("also appears"), std::invalid_argument);
}

TEST_CASE("synthetic universes") {
  CHECK(synth_dataset({1, 6, 0, Universe::A}).size() == 0);
  const Dataset x = synth_dataset({5, 6, 30, Universe::A});
  const Dataset y = synth_dataset({5, 6, 30, Universe::A});
  CHECK(x.images == y.images);
  CHECK(x.labels == y.labels);
  for (float v : x.images.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
  for (int l : x.labels) CHECK((l >= 0 && l < 6));
  for (const auto& ka : universe_classes(Universe::A, 6))
    for (const auto& kb : universe_classes(Universe::B, 6)) CHECK_FALSE(ka == kb);
}

TEST_CASE("CIFAR binary batches") {
  SUBCASE("10,000 records of 3,073 bytes") {
    std::vector<std::uint8_t> bytes(10000u * 3073u);
    Rng rng(4);
    for (std::size_t r = 0; r < 10000; ++r) bytes[r * 3073] = static_cast<std::uint8_t>(rng() % 10);
    const Dataset ds = parse_cifar_binary(bytes);
    CHECK(ds.size() == 10000);
    CHECK(ds.image_shape() == Shape{3, 32, 32});
    CHECK(encode_cifar_binary(ds) == bytes);
  }
  SUBCASE("channel planes are R, G, B, row-major") {
    std::vector<std::uint8_t> rec(3073, 0);
    rec[0] = 7;
    rec[1 + 0 * 1024 + 33] = 255;  // R, row 1, col 1
    rec[1 + 2 * 1024 + 1023] = 51;  // B, last pixel
    const Dataset ds = parse_cifar_binary(rec);
    CHECK(ds.labels[0] == 7);
    CHECK(ds.images[33] == 1.0f);
    CHECK(ds.images[2 * 1024 + 1023] == doctest::Approx(0.2f));
  }
  SUBCASE("a trailing 3,072-byte record is rejected at its offset") {
    std::vector<std::uint8_t> bytes(2 * 3073 + 3072, 1);
    try {
      parse_cifar_binary(bytes);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 2 * 3073);
    }
  }
  SUBCASE("labels out of range") {
    std::vector<std::uint8_t> rec(3073, 0);
    rec[0] = 10;
    CHECK_THROWS_AS(parse_cifar_binary(rec), FormatError);
  }
  SUBCASE("excluding every class is an error") {
    DatasetSpec spec;
    spec.synth = {1, 2, 10, Universe::A};
    spec.exclude_classes = {0, 1};
    CHECK_THROWS_AS(load_dataset(spec), std::invalid_argument);
    spec.exclude_classes = {1};
    for (int l : load_dataset(spec).labels) CHECK(l == 0);
  }
}

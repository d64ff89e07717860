#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "xemb/synthworld.hpp"

using namespace xemb;
using namespace xemb::synth;

namespace {
Dataset small_dataset() {
  DatasetConfig cfg;
  cfg.seeds_per_pair = 14;
  cfg.master_seed = 21;
  return build_dataset(cfg);
}
}  // namespace

TEST_CASE("oracle trains to the accuracy floor and classifies renders") {
  auto ds = small_dataset();
  auto oracle = OracleClassifier::train(ds);
  INFO("task acc ", oracle.task_accuracy(), " emb acc ",
       oracle.embodiment_accuracy());
  CHECK(oracle.task_accuracy() >= 0.99);
  CHECK(oracle.embodiment_accuracy() >= 0.99);
  CHECK(oracle.accepted());

  // clean parallel-jaw render classifies as parallel-jaw
  auto spec = sample_task(7777, TaskClass::kGrasp);
  EmbodimentSpec emb{Embodiment::kParallelJaw, 8.0, 1};
  auto demo = render_demo(spec, emb, 0, 42);
  auto verdict = oracle.classify(demo);
  CHECK(verdict.embodiment_id == static_cast<int>(Embodiment::kParallelJaw));
  CHECK(verdict.task_class == static_cast<int>(TaskClass::kGrasp));
  CHECK_FALSE(verdict.low_confidence);

  // pour demo hits the pour head
  auto pour = render_demo(sample_task(8888, TaskClass::kPour),
                          EmbodimentSpec{Embodiment::kSuction, 8.0, 0}, 1, 43);
  CHECK(oracle.classify(pour).task_class == static_cast<int>(TaskClass::kPour));

  // classification is deterministic
  auto v2 = oracle.classify(demo);
  CHECK(v2.embodiment_id == verdict.embodiment_id);
  CHECK(v2.embodiment_confidence == verdict.embodiment_confidence);

  // all-zero frames are flagged, not classified confidently
  std::vector<double> zeros(demo.frames.size(), 0.0);
  auto flat = oracle.classify(zeros, demo.n_frames, demo.height, demo.width,
                              demo.channels);
  CHECK(flat.low_confidence);

  // save / load round trip preserves verdicts
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "xemb_oracle.bin";
  oracle.save(path.string());
  auto loaded = OracleClassifier::load(path.string());
  CHECK(loaded.task_accuracy() == oracle.task_accuracy());
  auto v3 = loaded.classify(demo);
  CHECK(v3.embodiment_id == verdict.embodiment_id);
  CHECK(v3.task_confidence == verdict.task_confidence);
  fs::remove(path);
}

TEST_CASE("oracle training rejects datasets missing a class") {
  auto ds = small_dataset();
  // drop one embodiment from the train split
  std::vector<int> filtered;
  for (int i : ds.train_idx)
    if (ds.meta[static_cast<size_t>(i)].embodiment != 2) filtered.push_back(i);
  ds.train_idx = filtered;
  CHECK_THROWS_AS(OracleClassifier::train(ds), std::invalid_argument);
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lre/modality.hpp"
#include "lre/sequence.hpp"
#include "lre/vocab.hpp"

namespace lre::data {

struct GridCell {
  int shape = -1;  // -1 = empty
  int color = -1;
  bool empty() const { return shape < 0; }
  bool operator==(const GridCell&) const = default;
};

struct DocCell {
  int word = 0;
  int role = 0;
  bool operator==(const DocCell&) const = default;
};

// One payload: a 6x6 scene (IMG), 4 frames with one moving object (VID), a
// 6x6 grid of words with layout roles (DOC), or a token sequence (TXT).
// Targets and distractors are TXT scenes holding candidate answer tokens.
struct SceneSpec {
  Modality modality = Modality::TXT;
  std::vector<GridCell> img;                // kGridCells
  std::vector<std::vector<GridCell>> vid;   // kVidFrames x kGridCells
  std::vector<DocCell> doc;                 // kGridCells
  std::vector<int> txt;                     // token ids

  void validate() const;

  // raw per-cell features for inject_features (empty for TXT)
  std::vector<std::vector<float>> feature_cells() const;

  // discrete payload tokens (TXT only)
  const std::vector<int>& content_tokens() const { return txt; }

  bool operator==(const SceneSpec&) const = default;
};

struct CurriculumExample {
  std::uint64_t seed = 0;  // per-example generator seed
  Modality modality = Modality::TXT;
  SceneSpec payload;
  std::vector<int> question;
  std::vector<std::vector<int>> rationale;  // 2..4 segments, each <sep>-terminated
  std::vector<int> answer_span;
  SceneSpec target;                         // positive (TXT)
  std::vector<SceneSpec> distractors;       // one controlled attribute away
};

struct TaskMix {
  double txt = 0.25, img = 0.25, vid = 0.25, doc = 0.25;

  double share(Modality m) const;
  void validate() const;
};

// Deterministic procedural generation; example i depends only on
// (seed, i, its modality), so generation shards trivially.
std::vector<CurriculumExample> generate_dataset(const TaskMix& mix, int count,
                                                std::uint64_t seed);
CurriculumExample generate_example(Modality m, std::uint64_t example_seed,
                                   int distractor_count = 7);

// Brute-force checker: re-derives every rationale segment and the answer
// from the payload and confirms them. Independent of the generator's
// emission path.
bool verify_example(const CurriculumExample& ex, std::string* why = nullptr);

// ---------------------------------------------------------------------------
// progressive explicit-to-latent curriculum
// ---------------------------------------------------------------------------

struct StagePlan {
  int stage = 0;          // s in {0..S}
  int total_stages = 1;   // S
  double replaced_fraction = 0.0;  // f_s = s/S
  int latent_budget = 0;           // K_s = ceil(f_s * K)
  double epochs = 0.0;             // epoch share allocated to this stage
};

// Stage 0 gets 60% of the epochs, middle stages share 20%, the final stage
// takes the rest; reproduces the (3, 1/3, 1/3, 1/3, 1) split at S=4, E=5.
// Optional overrides replace the fraction/budget rules per stage (S+1 values
// covering stages 0..S).
std::vector<StagePlan> make_stage_plan(int total_stages, double total_epochs, int k,
                                       const std::vector<double>* fraction_override = nullptr,
                                       const std::vector<int>* budget_override = nullptr);

// Stage-dependent serialization of one side of a pair. The full stream is
//   payload ++ question ++ <anchor> <slt> ++ <ct>*ct_count ++ <elt>
//   ++ suffix_tokens ++ <gen>
// with supervision only on the flagged suffix tokens.
struct SerializedSequence {
  Modality modality = Modality::TXT;
  std::vector<int> payload_tokens;       // discrete payload (TXT / targets)
  bool has_feature_payload = false;      // IMG/VID/DOC payload cells
  std::vector<int> question_tokens;
  int ct_count = 0;
  std::vector<int> suffix_tokens;
  std::vector<std::uint8_t> suffix_supervised;
};

SerializedSequence rewrite_for_stage(const CurriculumExample& ex, const StagePlan& plan,
                                     const lre::model::SpecialTokens& tokens);
SerializedSequence serialize_target_for_stage(const SceneSpec& target, const StagePlan& plan,
                                              const lre::model::SpecialTokens& tokens);

// Flattened view for mask-level assertions: one entry per position.
struct FlatElement {
  bool is_payload_cell = false;  // continuous feature position
  int token_id = -1;
  bool supervised = false;
};
std::vector<FlatElement> flatten(const SerializedSequence& ser,
                                 const lre::model::SpecialTokens& tokens);

// ---------------------------------------------------------------------------
// persistence (line-delimited records with a one-line header)
// ---------------------------------------------------------------------------

struct DatasetHeader {
  std::string format = "lre-dataset-v1";
  int count = 0;
  std::uint64_t seed = 0;
  TaskMix mix;
};

std::string dataset_to_jsonl(const std::vector<CurriculumExample>& examples,
                             const DatasetHeader& header);
std::vector<CurriculumExample> dataset_from_jsonl(const std::string& text,
                                                  DatasetHeader* header_out = nullptr);
void save_dataset(const std::string& path, const std::vector<CurriculumExample>& examples,
                  const DatasetHeader& header);
std::vector<CurriculumExample> load_dataset(const std::string& path,
                                            DatasetHeader* header_out = nullptr);

}  // namespace lre::data

#include <benchmark/benchmark.h>

#include "lre/data.hpp"
#include "lre/encode.hpp"
#include "lre/rollout.hpp"
#include "lre/vocab.hpp"

using namespace lre;

namespace {

train::Model desk_model(std::uint64_t seed) {
  model::ModelConfig mc;  // desk-scale defaults
  mc.vocab_size = data::Vocab::instance().size();
  model::AdapterConfig ac;
  return train::Model(mc, ac, data::Vocab::instance().specials(),
                      train::apply_ablation({}), seed);
}

void BM_prefix_encode_img(benchmark::State& state) {
  auto m = desk_model(1);
  auto ex = data::generate_example(Modality::IMG, 7);
  NoGradGuard ng;
  for (auto _ : state) {
    data::SerializedSequence ser;
    ser.modality = ex.modality;
    ser.has_feature_payload = true;
    ser.question_tokens = ex.question;
    auto seq = train::build_prefix_sequence(m, ser, &ex.payload);
    auto pre = m.backbone.encode_prefix(seq);
    benchmark::DoNotOptimize(pre.h_slt.data());
  }
}
BENCHMARK(BM_prefix_encode_img);

void BM_single_step(benchmark::State& state) {
  auto m = desk_model(2);
  auto ex = data::generate_example(Modality::IMG, 9);
  NoGradGuard ng;
  data::SerializedSequence ser;
  ser.modality = ex.modality;
  ser.has_feature_payload = true;
  ser.question_tokens = ex.question;
  auto seq = train::build_prefix_sequence(m, ser, &ex.payload);
  auto pre = m.backbone.encode_prefix(seq);
  auto z = pre.h_slt;
  int pos = pre.cache.current_length;
  for (auto _ : state) {
    z = m.backbone.step(z, pre.cache, pos++);
    benchmark::DoNotOptimize(z.data());
    if (pos > 700) {
      state.PauseTiming();
      pre = m.backbone.encode_prefix(seq);
      z = pre.h_slt;
      pos = pre.cache.current_length;
      state.ResumeTiming();
    }
  }
}
BENCHMARK(BM_single_step);

void BM_rollout_k8(benchmark::State& state) {
  auto m = desk_model(3);
  auto ex = data::generate_example(Modality::TXT, 11);
  NoGradGuard ng;
  for (auto _ : state) {
    data::SerializedSequence ser;
    ser.modality = ex.modality;
    ser.payload_tokens = ex.payload.txt;
    ser.question_tokens = ex.question;
    ser.ct_count = 8;
    auto out = train::encode_sequence(m, ser, &ex.payload, model::EmbedMode::Infer);
    benchmark::DoNotOptimize(out.e_gen.data());
  }
}
BENCHMARK(BM_rollout_k8);

}  // namespace

BENCHMARK_MAIN();

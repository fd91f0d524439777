#pragma once

#include <memory>
#include <string>

#include "lre/encode.hpp"
#include "lre/runconfig.hpp"
#include "lre/trainer.hpp"

namespace lre::run {

// A model plus its optimizer and schedule position, reconstructible from a
// checkpoint file alone (the resolved config travels inside the manifest).
struct RunBundle {
  RunConfig config;
  std::unique_ptr<train::Model> model;
  std::unique_ptr<train::AdamW<float>> optimizer;
  int stage = 0;
  long step = 0;

  RunBundle() = default;
  RunBundle(RunBundle&&) = default;
  RunBundle& operator=(RunBundle&&) = default;
};

RunBundle make_bundle(const RunConfig& config);

// Binary layout: magic, manifest length, manifest JSON (format version,
// embedded config text, config hash, stage, step, optimizer step count, blob
// table), then raw little-endian float data. Every blob carries an FNV-1a64
// digest; a mismatch on load is fatal.
void save_checkpoint(const std::string& path, const RunBundle& bundle);

// expect_config_hash, when given, must match the manifest's config hash
// (cmd_eval-style compatibility gate).
RunBundle load_checkpoint(const std::string& path,
                          const std::string* expect_config_hash = nullptr);

}  // namespace lre::run

#include "lre/checkpoint.hpp"

#include <cstring>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "lre/fsutil.hpp"
#include "lre/vocab.hpp"

namespace lre::run {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'R', 'E', 'C', 'K', 'P', 'T', '1'};

struct BlobRef {
  std::string name;
  std::vector<int> shape;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
  std::string digest;
};

void append_raw(std::string& out, const void* data, std::size_t len) {
  out.append(static_cast<const char*>(data), len);
}

}  // namespace

RunBundle make_bundle(const RunConfig& config) {
  config.validate();
  RunBundle b;
  b.config = config;
  b.model = std::make_unique<train::Model>(config.model, config.adapter,
                                           data::Vocab::instance().specials(),
                                           config.wiring(), config.train.seed);
  train::AdamW<float>::Hyper h;
  h.lr = config.train.learning_rate;
  h.weight_decay = config.train.weight_decay;
  b.optimizer = std::make_unique<train::AdamW<float>>(h, b.model->named_params());
  return b;
}

void save_checkpoint(const std::string& path, const RunBundle& bundle) {
  const std::string config_text = bundle.config.serialize();
  json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = config_text;
  manifest["config_hash"] = hex64(fnv1a64(config_text));
  manifest["stage"] = bundle.stage;
  manifest["step"] = bundle.step;
  manifest["optimizer_steps"] = bundle.optimizer->step_count();

  std::string blob_region;
  json blobs = json::array();
  auto add_blob = [&](const std::string& name, const std::vector<int>& shape,
                      const float* data, std::size_t count) {
    json b;
    b["name"] = name;
    b["shape"] = shape;
    b["offset"] = blob_region.size();
    const std::size_t bytes = count * sizeof(float);
    b["bytes"] = bytes;
    b["fnv64"] = hex64(fnv1a64(data, bytes));
    append_raw(blob_region, data, bytes);
    blobs.push_back(std::move(b));
  };

  auto params = bundle.model->named_params();
  for (auto& [name, t] : params) {
    add_blob(name, t->shape(), t->data(), t->size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].first;
    auto& m1 = bundle.optimizer->moment1(i);
    auto& m2 = bundle.optimizer->moment2(i);
    add_blob("opt.m." + name, {static_cast<int>(m1.size())}, m1.data(), m1.size());
    add_blob("opt.v." + name, {static_cast<int>(m2.size())}, m2.data(), m2.size());
  }
  manifest["blobs"] = std::move(blobs);

  const std::string mtext = manifest.dump();
  std::string out;
  append_raw(out, kMagic, sizeof(kMagic));
  const std::uint64_t mlen = mtext.size();
  append_raw(out, &mlen, sizeof(mlen));
  out += mtext;
  out += blob_region;
  atomic_write_file(path, out);
}

RunBundle load_checkpoint(const std::string& path, const std::string* expect_config_hash) {
  const std::string raw = read_file(path);
  if (raw.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, raw.data() + sizeof(kMagic), sizeof(mlen));
  const std::size_t header = sizeof(kMagic) + sizeof(std::uint64_t);
  if (raw.size() < header + mlen) throw std::runtime_error("checkpoint: truncated manifest");
  const json manifest = json::parse(raw.substr(header, mlen));
  if (manifest.at("format_version").get<int>() != 1) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  const std::string config_text = manifest.at("config").get<std::string>();
  const std::string stored_hash = manifest.at("config_hash").get<std::string>();
  if (stored_hash != hex64(fnv1a64(config_text))) {
    throw std::runtime_error("checkpoint: config hash mismatch (corrupted manifest)");
  }
  if (expect_config_hash && *expect_config_hash != stored_hash) {
    throw std::runtime_error("checkpoint: config hash does not match the requested config");
  }

  RunBundle bundle = make_bundle(RunConfig::parse(config_text));
  bundle.stage = manifest.at("stage").get<int>();
  bundle.step = manifest.at("step").get<long>();
  bundle.optimizer->set_step_count(manifest.at("optimizer_steps").get<long>());

  const char* blob_base = raw.data() + header + mlen;
  const std::size_t blob_region_size = raw.size() - header - mlen;

  std::map<std::string, const json*> blob_index;
  for (const auto& b : manifest.at("blobs")) {
    blob_index[b.at("name").get<std::string>()] = &b;
  }
  auto read_blob = [&](const std::string& name, float* dst, std::size_t count) {
    auto it = blob_index.find(name);
    if (it == blob_index.end()) {
      throw std::runtime_error("checkpoint: missing blob '" + name + "'");
    }
    const json& b = *it->second;
    const std::uint64_t offset = b.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = b.at("bytes").get<std::uint64_t>();
    if (bytes != count * sizeof(float) || offset + bytes > blob_region_size) {
      throw std::runtime_error("checkpoint: blob '" + name + "' has unexpected size");
    }
    if (hex64(fnv1a64(blob_base + offset, bytes)) != b.at("fnv64").get<std::string>()) {
      throw std::runtime_error("checkpoint: digest mismatch in blob '" + name + "'");
    }
    std::memcpy(dst, blob_base + offset, bytes);
  };

  auto params = bundle.model->named_params();
  for (auto& [name, t] : params) read_blob(name, t->data(), t->size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].first;
    read_blob("opt.m." + name, bundle.optimizer->moment1(i).data(),
              bundle.optimizer->moment1(i).size());
    read_blob("opt.v." + name, bundle.optimizer->moment2(i).data(),
              bundle.optimizer->moment2(i).size());
  }
  return bundle;
}

}  // namespace lre::run

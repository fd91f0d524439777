#pragma once

#include <stdexcept>
#include <vector>

#include "lre/modality.hpp"
#include "lre/tensor.hpp"

namespace lre::model {

struct SpecialTokens {
  int anchor_id = -1;
  int slt_id = -1;
  int ct_id = -1;
  int elt_id = -1;
  int gen_id = -1;

  void validate(int vocab_size) const {
    const int ids[5] = {anchor_id, slt_id, ct_id, elt_id, gen_id};
    for (int i = 0; i < 5; ++i) {
      if (ids[i] < 0 || ids[i] >= vocab_size) {
        throw std::invalid_argument("special token id out of vocabulary range");
      }
      for (int j = i + 1; j < 5; ++j) {
        if (ids[i] == ids[j]) {
          throw std::invalid_argument("special token ids must be distinct");
        }
      }
    }
  }
};

// Interleaved stream of discrete tokens and continuous feature blocks, ready
// for prefix encoding. Feature blocks are already projected to the model
// dimension ([rows, D] tensors on the tape, so the projection trains).
template <typename S>
struct MultimodalSequenceT {
  struct Item {
    int token_id = -1;
    TensorT<S> features;  // defined() => feature block
    Modality feature_modality = Modality::TXT;

    bool is_features() const { return features.defined(); }
    int length() const { return is_features() ? features.rows() : 1; }
  };

  std::vector<Item> items;
  int anchor_item = -1;
  int slt_item = -1;

  int length() const {
    int n = 0;
    for (const auto& it : items) n += it.length();
    return n;
  }

  int item_position(int item_index) const {
    int p = 0;
    for (int i = 0; i < item_index; ++i) p += items[static_cast<std::size_t>(i)].length();
    return p;
  }

  int anchor_pos() const { return item_position(anchor_item); }
  int slt_pos() const { return item_position(slt_item); }

  void push_token(int id) { items.push_back(Item{id, {}, Modality::TXT}); }
  void push_features(TensorT<S> block, Modality m) {
    Item it;
    it.features = std::move(block);
    it.feature_modality = m;
    items.push_back(std::move(it));
  }

  // Invariants: exactly one anchor and one slt, slt after anchor, continuous
  // features only before slt.
  void validate(const SpecialTokens& specials, int max_position) const {
    int anchors = 0, slts = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].is_features()) continue;
      if (items[i].token_id == specials.anchor_id) {
        ++anchors;
        if (static_cast<int>(i) != anchor_item) {
          throw std::invalid_argument("sequence: anchor_item index mismatch");
        }
      }
      if (items[i].token_id == specials.slt_id) {
        ++slts;
        if (static_cast<int>(i) != slt_item) {
          throw std::invalid_argument("sequence: slt_item index mismatch");
        }
      }
    }
    if (anchors != 1 || slts != 1) {
      throw std::invalid_argument("sequence: exactly one <anchor> and one <slt> required");
    }
    if (slt_item <= anchor_item) {
      throw std::invalid_argument("sequence: <slt> must follow <anchor>");
    }
    for (std::size_t i = static_cast<std::size_t>(slt_item); i < items.size(); ++i) {
      if (items[i].is_features()) {
        throw std::invalid_argument("sequence: feature blocks must precede <slt>");
      }
    }
    if (length() > max_position) {
      throw std::invalid_argument("sequence: length exceeds max_position");
    }
  }
};

using MultimodalSequence = MultimodalSequenceT<float>;

}  // namespace lre::model

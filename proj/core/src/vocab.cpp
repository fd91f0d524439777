#include "lre/vocab.hpp"

#include <stdexcept>

namespace lre::data {

const Vocab& Vocab::instance() {
  static const Vocab v;
  return v;
}

Vocab::Vocab() {
  auto put = [&](const std::string& n) {
    index_[n] = static_cast<int>(names_.size());
    names_.push_back(n);
    return static_cast<int>(names_.size()) - 1;
  };

  anchor_ = put("<anchor>");
  slt_ = put("<slt>");
  ct_ = put("<ct>");
  elt_ = put("<elt>");
  gen_ = put("<gen>");
  sep_ = put("<sep>");

  static const char* kShapes[] = {"circle", "square", "triangle", "star", "diamond", "cross"};
  static const char* kColors[] = {"red", "blue", "green", "yellow", "purple", "orange"};
  static const char* kRoles[] = {"title", "header", "body", "footer"};
  static const char* kRels[] = {"left_of", "right_of", "above", "below"};
  static const char* kDirs[] = {"up", "down", "left", "right"};
  static const char* kGlue[] = {"what", "which", "is", "at", "holds", "the", "and",
                                "answer", "to", "moved", "track", "moving", "object",
                                "entity"};

  shape0_ = static_cast<int>(names_.size());
  for (const char* s : kShapes) put(s);
  color0_ = static_cast<int>(names_.size());
  for (const char* s : kColors) put(s);
  row0_ = static_cast<int>(names_.size());
  for (int i = 0; i < kGridSide; ++i) put("r" + std::to_string(i));
  col0_ = static_cast<int>(names_.size());
  for (int i = 0; i < kGridSide; ++i) put("c" + std::to_string(i));
  frame0_ = static_cast<int>(names_.size());
  for (int i = 0; i < kVidFrames; ++i) put("f" + std::to_string(i));
  role0_ = static_cast<int>(names_.size());
  for (const char* s : kRoles) put(s);
  word0_ = static_cast<int>(names_.size());
  for (int i = 0; i < kDocWordCount; ++i) put("w" + std::to_string(i));
  entity0_ = static_cast<int>(names_.size());
  for (int i = 0; i < kEntityCount; ++i) put("ent" + std::to_string(i));
  rel0_ = static_cast<int>(names_.size());
  for (const char* s : kRels) put(s);
  dir0_ = static_cast<int>(names_.size());
  for (const char* s : kDirs) put(s);
  for (const char* s : kGlue) put(s);
}

int Vocab::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("vocab: unknown token '" + name + "'");
  return it->second;
}

const std::string& Vocab::name(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id out of range");
  return names_[static_cast<std::size_t>(id)];
}

lre::model::SpecialTokens Vocab::specials() const {
  lre::model::SpecialTokens t;
  t.anchor_id = anchor_;
  t.slt_id = slt_;
  t.ct_id = ct_;
  t.elt_id = elt_;
  t.gen_id = gen_;
  return t;
}

int Vocab::check_range(int i, int n) {
  if (i < 0 || i >= n) throw std::out_of_range("vocab: group index out of range");
  return i;
}

std::string Vocab::render(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += name(ids[i]);
  }
  return out;
}

}  // namespace lre::data

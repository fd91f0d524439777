#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lre/modality.hpp"
#include "lre/sequence.hpp"

namespace lre::data {

enum class Rel { LeftOf = 0, RightOf = 1, Above = 2, Below = 3 };
enum class Dir { Up = 0, Down = 1, Left = 2, Right = 3 };

// Fixed closed vocabulary shared by the generator, the rewriter and the
// model. Ids are stable: the token list is part of the dataset format.
class Vocab {
 public:
  static const Vocab& instance();

  int id(const std::string& name) const;
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }

  lre::model::SpecialTokens specials() const;
  int sep_id() const { return sep_; }

  int shape_id(int i) const { return shape0_ + check_range(i, kShapeCount); }
  int color_id(int i) const { return color0_ + check_range(i, kColorCount); }
  int row_id(int i) const { return row0_ + check_range(i, kGridSide); }
  int col_id(int i) const { return col0_ + check_range(i, kGridSide); }
  int frame_id(int i) const { return frame0_ + check_range(i, kVidFrames); }
  int role_id(int i) const { return role0_ + check_range(i, kDocRoleCount); }
  int word_id(int i) const { return word0_ + check_range(i, kDocWordCount); }
  int entity_id(int i) const { return entity0_ + check_range(i, kEntityCount); }
  int rel_id(Rel r) const { return rel0_ + static_cast<int>(r); }
  int dir_id(Dir d) const { return dir0_ + static_cast<int>(d); }

  // inverse lookups; return -1 when the id is not in the group
  int shape_index(int id) const { return group_index(id, shape0_, kShapeCount); }
  int color_index(int id) const { return group_index(id, color0_, kColorCount); }
  int row_index(int id) const { return group_index(id, row0_, kGridSide); }
  int col_index(int id) const { return group_index(id, col0_, kGridSide); }
  int frame_index(int id) const { return group_index(id, frame0_, kVidFrames); }
  int role_index(int id) const { return group_index(id, role0_, kDocRoleCount); }
  int word_index(int id) const { return group_index(id, word0_, kDocWordCount); }
  int entity_index(int id) const { return group_index(id, entity0_, kEntityCount); }
  int rel_index(int id) const { return group_index(id, rel0_, 4); }
  int dir_index(int id) const { return group_index(id, dir0_, 4); }

  static constexpr int kEntityCount = 8;

  std::string render(const std::vector<int>& ids) const;

 private:
  Vocab();
  static int check_range(int i, int n);
  int group_index(int id, int base, int n) const {
    return (id >= base && id < base + n) ? id - base : -1;
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  int anchor_ = 0, slt_ = 0, ct_ = 0, elt_ = 0, gen_ = 0, sep_ = 0;
  int shape0_ = 0, color0_ = 0, row0_ = 0, col0_ = 0, frame0_ = 0;
  int role0_ = 0, word0_ = 0, entity0_ = 0, rel0_ = 0, dir0_ = 0;
};

}  // namespace lre::data

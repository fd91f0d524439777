#include "lre/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lre/fsutil.hpp"
#include "lre/rng.hpp"

namespace lre::data {

using nlohmann::json;

namespace {

const Vocab& V() { return Vocab::instance(); }

int rc_index(int r, int c) { return r * kGridSide + c; }

struct Pos {
  int r = -1, c = -1;
  bool valid() const { return r >= 0; }
  bool operator==(const Pos&) const = default;
};

Pos rel_neighbor(Rel rel, Pos p) {
  switch (rel) {
    case Rel::LeftOf: return {p.r, p.c - 1};
    case Rel::RightOf: return {p.r, p.c + 1};
    case Rel::Above: return {p.r - 1, p.c};
    case Rel::Below: return {p.r + 1, p.c};
  }
  return {};
}

bool in_grid(Pos p) { return p.r >= 0 && p.r < kGridSide && p.c >= 0 && p.c < kGridSide; }

Pos dir_step(Dir d, Pos p) {
  switch (d) {
    case Dir::Up: return {p.r - 1, p.c};
    case Dir::Down: return {p.r + 1, p.c};
    case Dir::Left: return {p.r, p.c - 1};
    case Dir::Right: return {p.r, p.c + 1};
  }
  return {};
}

std::vector<int> seg(std::initializer_list<int> ids) {
  std::vector<int> s(ids);
  s.push_back(V().sep_id());
  return s;
}

// ---- IMG ------------------------------------------------------------------

CurriculumExample gen_img(Rng& rng) {
  CurriculumExample ex;
  ex.modality = Modality::IMG;
  ex.payload.modality = Modality::IMG;
  auto& grid = ex.payload.img;
  grid.resize(kGridCells);
  for (auto& cell : grid) {
    cell.shape = rng.next_int(0, kShapeCount - 1);
    cell.color = rng.next_int(0, kColorCount - 1);
  }

  const Rel rel = static_cast<Rel>(rng.next_int(0, 3));
  // pick a cue position whose rel-neighbor stays in the grid
  Pos cue;
  do {
    cue = {rng.next_int(0, kGridSide - 1), rng.next_int(0, kGridSide - 1)};
  } while (!in_grid(rel_neighbor(rel, cue)));
  const GridCell cue_cell = grid[static_cast<std::size_t>(rc_index(cue.r, cue.c))];
  // the referenced (color, shape) pair must be unique in the grid
  for (int i = 0; i < kGridCells; ++i) {
    if (i == rc_index(cue.r, cue.c)) continue;
    auto& cell = grid[static_cast<std::size_t>(i)];
    while (cell == cue_cell) {
      cell.shape = rng.next_int(0, kShapeCount - 1);
      cell.color = rng.next_int(0, kColorCount - 1);
    }
  }
  const Pos ans = rel_neighbor(rel, cue);
  const GridCell ans_cell = grid[static_cast<std::size_t>(rc_index(ans.r, ans.c))];

  const int cue_color = V().color_id(cue_cell.color), cue_shape = V().shape_id(cue_cell.shape);
  const int ans_color = V().color_id(ans_cell.color), ans_shape = V().shape_id(ans_cell.shape);
  ex.question = {V().id("what"), V().id("is"), V().rel_id(rel), V().id("the"), cue_color,
                 cue_shape};
  ex.rationale = {
      seg({V().id("the"), cue_color, cue_shape, V().id("at"), V().row_id(cue.r),
           V().col_id(cue.c)}),
      seg({V().rel_id(rel), V().row_id(cue.r), V().col_id(cue.c), V().id("is"),
           V().row_id(ans.r), V().col_id(ans.c)}),
      seg({V().row_id(ans.r), V().col_id(ans.c), V().id("holds"), ans_color, ans_shape}),
      seg({V().id("answer"), ans_color, ans_shape}),
  };
  ex.answer_span = {ans_color, ans_shape};
  return ex;
}

// ---- VID ------------------------------------------------------------------

CurriculumExample gen_vid(Rng& rng) {
  CurriculumExample ex;
  ex.modality = Modality::VID;
  ex.payload.modality = Modality::VID;

  std::vector<GridCell> base(kGridCells);  // empty background
  // static filler objects at distinct positions with pairwise-distinct looks
  const int n_static = 6;
  std::vector<int> positions(kGridCells);
  std::iota(positions.begin(), positions.end(), 0);
  for (int i = 0; i < n_static + 1; ++i) {
    const int j = rng.next_int(i, kGridCells - 1);
    std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  }
  std::vector<GridCell> looks;
  auto fresh_look = [&]() {
    GridCell g;
    do {
      g.shape = rng.next_int(0, kShapeCount - 1);
      g.color = rng.next_int(0, kColorCount - 1);
    } while (std::find(looks.begin(), looks.end(), g) != looks.end());
    looks.push_back(g);
    return g;
  };
  for (int i = 0; i < n_static; ++i) {
    base[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])] = fresh_look();
  }
  const GridCell mover = fresh_look();
  Pos p{positions[static_cast<std::size_t>(n_static)] / kGridSide,
        positions[static_cast<std::size_t>(n_static)] % kGridSide};

  std::vector<Pos> track = {p};
  std::vector<Dir> dirs;
  for (int stepi = 0; stepi < kVidFrames - 1; ++stepi) {
    // pick a legal move: stays on the grid, lands on an empty background cell
    std::vector<Dir> options;
    for (int d = 0; d < 4; ++d) {
      const Pos q = dir_step(static_cast<Dir>(d), track.back());
      if (in_grid(q) && base[static_cast<std::size_t>(rc_index(q.r, q.c))].empty()) {
        options.push_back(static_cast<Dir>(d));
      }
    }
    // a surrounded mover restarts the walk deterministically from the rng
    if (options.empty()) {
      return gen_vid(rng);
    }
    const Dir d = options[static_cast<std::size_t>(rng.next_int(0, static_cast<int>(options.size()) - 1))];
    dirs.push_back(d);
    track.push_back(dir_step(d, track.back()));
  }

  ex.payload.vid.resize(kVidFrames);
  for (int f = 0; f < kVidFrames; ++f) {
    ex.payload.vid[static_cast<std::size_t>(f)] = base;
    const Pos q = track[static_cast<std::size_t>(f)];
    ex.payload.vid[static_cast<std::size_t>(f)][static_cast<std::size_t>(rc_index(q.r, q.c))] =
        mover;
  }

  const int m_color = V().color_id(mover.color), m_shape = V().shape_id(mover.shape);
  const Pos last = track.back();
  ex.question = {V().id("track"), V().id("the"), V().id("moving"), V().id("object")};
  for (int f = 0; f < kVidFrames - 1; ++f) {
    ex.rationale.push_back(seg({V().frame_id(f), V().id("to"), V().frame_id(f + 1), m_color,
                                m_shape, V().id("moved"),
                                V().dir_id(dirs[static_cast<std::size_t>(f)])}));
  }
  ex.rationale.push_back(seg({V().id("answer"), m_color, m_shape, V().id("at"),
                              V().row_id(last.r), V().col_id(last.c)}));
  ex.answer_span = {m_color, m_shape, V().id("at"), V().row_id(last.r), V().col_id(last.c)};
  return ex;
}

// ---- DOC ------------------------------------------------------------------

// fixed layout: row 0 title, row 1 header, rows 2-4 body, row 5 footer
int doc_role_for_row(int r) {
  if (r == 0) return 0;
  if (r == 1) return 1;
  if (r <= 4) return 2;
  return 3;
}

CurriculumExample gen_doc(Rng& rng) {
  CurriculumExample ex;
  ex.modality = Modality::DOC;
  ex.payload.modality = Modality::DOC;
  auto& doc = ex.payload.doc;
  doc.resize(kGridCells);
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) {
      doc[static_cast<std::size_t>(rc_index(r, c))] = {rng.next_int(0, kDocWordCount - 1),
                                                       doc_role_for_row(r)};
    }
  }
  // cue word appears in exactly one header cell
  const int cue_col = rng.next_int(0, kGridSide - 1);
  const int cue_word = doc[static_cast<std::size_t>(rc_index(1, cue_col))].word;
  for (int c = 0; c < kGridSide; ++c) {
    if (c == cue_col) continue;
    auto& cell = doc[static_cast<std::size_t>(rc_index(1, c))];
    while (cell.word == cue_word) cell.word = rng.next_int(0, kDocWordCount - 1);
  }
  const int ans_word = doc[static_cast<std::size_t>(rc_index(2, cue_col))].word;

  ex.question = {V().id("what"), V().role_id(2), V().id("is"), V().rel_id(Rel::Below),
                 V().role_id(1), V().word_id(cue_word)};
  ex.rationale = {
      seg({V().role_id(1), V().word_id(cue_word), V().id("at"), V().row_id(1),
           V().col_id(cue_col)}),
      seg({V().rel_id(Rel::Below), V().row_id(1), V().col_id(cue_col), V().id("is"),
           V().row_id(2), V().col_id(cue_col)}),
      seg({V().row_id(2), V().col_id(cue_col), V().id("holds"), V().role_id(2),
           V().word_id(ans_word)}),
      seg({V().id("answer"), V().word_id(ans_word), V().id("at"), V().row_id(2),
           V().col_id(cue_col)}),
  };
  ex.answer_span = {V().word_id(ans_word), V().id("at"), V().row_id(2), V().col_id(cue_col)};
  return ex;
}

// ---- TXT ------------------------------------------------------------------

CurriculumExample gen_txt(Rng& rng) {
  CurriculumExample ex;
  ex.modality = Modality::TXT;
  ex.payload.modality = Modality::TXT;

  const int n_entities = 3;
  std::vector<int> names;
  while (static_cast<int>(names.size()) < n_entities) {
    const int n = rng.next_int(0, Vocab::kEntityCount - 1);
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  }
  std::vector<GridCell> attrs;
  while (static_cast<int>(attrs.size()) < n_entities) {
    GridCell g{rng.next_int(0, kShapeCount - 1), rng.next_int(0, kColorCount - 1)};
    if (std::find(attrs.begin(), attrs.end(), g) == attrs.end()) attrs.push_back(g);
  }
  const int match = rng.next_int(0, n_entities - 1);

  for (int i = 0; i < n_entities; ++i) {
    ex.payload.txt.push_back(V().entity_id(names[static_cast<std::size_t>(i)]));
    ex.payload.txt.push_back(V().color_id(attrs[static_cast<std::size_t>(i)].color));
    ex.payload.txt.push_back(V().shape_id(attrs[static_cast<std::size_t>(i)].shape));
    ex.payload.txt.push_back(V().sep_id());
  }

  const int q_color = V().color_id(attrs[static_cast<std::size_t>(match)].color);
  const int q_shape = V().shape_id(attrs[static_cast<std::size_t>(match)].shape);
  const int m_name = V().entity_id(names[static_cast<std::size_t>(match)]);
  ex.question = {V().id("which"), V().id("entity"), V().id("is"), q_color, V().id("and"),
                 q_shape};
  for (int i = 0; i < n_entities; ++i) {
    if (i == match) continue;
    ex.rationale.push_back(seg({V().entity_id(names[static_cast<std::size_t>(i)]), V().id("is"),
                                V().color_id(attrs[static_cast<std::size_t>(i)].color),
                                V().shape_id(attrs[static_cast<std::size_t>(i)].shape)}));
  }
  ex.rationale.push_back(seg({V().id("answer"), m_name, q_color, q_shape}));
  ex.answer_span = {m_name, q_color, q_shape};
  return ex;
}

// ---- distractors ----------------------------------------------------------

SceneSpec txt_scene(std::vector<int> tokens) {
  SceneSpec s;
  s.modality = Modality::TXT;
  s.txt = std::move(tokens);
  return s;
}

// every variant differs from the answer span in exactly one token slot,
// staying inside that slot's vocabulary group
std::vector<std::vector<int>> one_attribute_variants(const std::vector<int>& answer, Rng& rng,
                                                     int want) {
  std::vector<std::vector<int>> out;
  std::vector<std::pair<std::size_t, int>> slots;  // (position, group size)
  for (std::size_t i = 0; i < answer.size(); ++i) {
    const int id = answer[i];
    if (V().color_index(id) >= 0 || V().shape_index(id) >= 0 || V().row_index(id) >= 0 ||
        V().col_index(id) >= 0 || V().word_index(id) >= 0 || V().entity_index(id) >= 0) {
      slots.emplace_back(i, 0);
    }
  }
  if (slots.empty()) throw std::logic_error("answer span has no mutable slots");
  int guard = 0;
  while (static_cast<int>(out.size()) < want && guard++ < 1000) {
    const auto [pos, unused] = slots[static_cast<std::size_t>(
        rng.next_int(0, static_cast<int>(slots.size()) - 1))];
    const int id = answer[pos];
    int replacement = id;
    if (int k = V().color_index(id); k >= 0) {
      replacement = V().color_id((k + rng.next_int(1, kColorCount - 1)) % kColorCount);
    } else if (int k2 = V().shape_index(id); k2 >= 0) {
      replacement = V().shape_id((k2 + rng.next_int(1, kShapeCount - 1)) % kShapeCount);
    } else if (int k3 = V().row_index(id); k3 >= 0) {
      replacement = V().row_id((k3 + rng.next_int(1, kGridSide - 1)) % kGridSide);
    } else if (int k4 = V().col_index(id); k4 >= 0) {
      replacement = V().col_id((k4 + rng.next_int(1, kGridSide - 1)) % kGridSide);
    } else if (int k5 = V().word_index(id); k5 >= 0) {
      replacement = V().word_id((k5 + rng.next_int(1, kDocWordCount - 1)) % kDocWordCount);
    } else if (int k6 = V().entity_index(id); k6 >= 0) {
      replacement = V().entity_id((k6 + rng.next_int(1, Vocab::kEntityCount - 1)) %
                                  Vocab::kEntityCount);
    }
    std::vector<int> variant = answer;
    variant[pos] = replacement;
    if (variant != answer && std::find(out.begin(), out.end(), variant) == out.end()) {
      out.push_back(std::move(variant));
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

double TaskMix::share(Modality m) const {
  switch (m) {
    case Modality::TXT: return txt;
    case Modality::IMG: return img;
    case Modality::VID: return vid;
    case Modality::DOC: return doc;
  }
  return 0;
}

void TaskMix::validate() const {
  const double s = txt + img + vid + doc;
  if (txt < 0 || img < 0 || vid < 0 || doc < 0 || s <= 0) {
    throw std::invalid_argument("task_mix: shares must be nonnegative with a positive sum");
  }
}

void SceneSpec::validate() const {
  switch (modality) {
    case Modality::IMG:
      if (static_cast<int>(img.size()) != kGridCells) {
        throw std::invalid_argument("scene: IMG grid must have exactly 36 cells");
      }
      break;
    case Modality::VID: {
      if (static_cast<int>(vid.size()) != kVidFrames) {
        throw std::invalid_argument("scene: VID must have exactly 4 frames");
      }
      for (const auto& f : vid) {
        if (static_cast<int>(f.size()) != kGridCells) {
          throw std::invalid_argument("scene: VID frames must have exactly 36 cells");
        }
      }
      for (int f = 0; f + 1 < kVidFrames; ++f) {
        int moved_from = -1, moved_to = -1, diffs = 0;
        for (int i = 0; i < kGridCells; ++i) {
          const auto& a = vid[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
          const auto& b = vid[static_cast<std::size_t>(f + 1)][static_cast<std::size_t>(i)];
          if (a == b) continue;
          ++diffs;
          if (!a.empty() && b.empty()) moved_from = i;
          if (a.empty() && !b.empty()) moved_to = i;
        }
        if (diffs != 2 || moved_from < 0 || moved_to < 0) {
          throw std::invalid_argument("scene: VID frames must differ by exactly one move");
        }
        const int dr = std::abs(moved_from / kGridSide - moved_to / kGridSide);
        const int dc = std::abs(moved_from % kGridSide - moved_to % kGridSide);
        if (dr + dc != 1) {
          throw std::invalid_argument("scene: VID move must be one legal step");
        }
      }
      break;
    }
    case Modality::DOC:
      if (static_cast<int>(doc.size()) != kGridCells) {
        throw std::invalid_argument("scene: DOC grid must have exactly 36 cells");
      }
      break;
    case Modality::TXT:
      if (txt.empty()) throw std::invalid_argument("scene: TXT payload must be nonempty");
      break;
  }
}

std::vector<std::vector<float>> SceneSpec::feature_cells() const {
  std::vector<std::vector<float>> cells;
  auto onehot = [](std::vector<float>& v, int base, int idx) {
    if (idx >= 0) v[static_cast<std::size_t>(base + idx)] = 1.0f;
  };
  switch (modality) {
    case Modality::TXT: break;
    case Modality::IMG: {
      const int w = raw_feature_dim(Modality::IMG);
      for (int i = 0; i < kGridCells; ++i) {
        std::vector<float> v(static_cast<std::size_t>(w), 0.0f);
        const auto& cell = img[static_cast<std::size_t>(i)];
        onehot(v, 0, cell.shape);
        onehot(v, kShapeCount, cell.color);
        onehot(v, kShapeCount + kColorCount, i / kGridSide);
        onehot(v, kShapeCount + kColorCount + kGridSide, i % kGridSide);
        cells.push_back(std::move(v));
      }
      break;
    }
    case Modality::VID: {
      const int w = raw_feature_dim(Modality::VID);
      for (int f = 0; f < kVidFrames; ++f) {
        for (int i = 0; i < kGridCells; ++i) {
          std::vector<float> v(static_cast<std::size_t>(w), 0.0f);
          const auto& cell = vid[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
          onehot(v, 0, cell.shape);
          onehot(v, kShapeCount, cell.color);
          onehot(v, kShapeCount + kColorCount, i / kGridSide);
          onehot(v, kShapeCount + kColorCount + kGridSide, i % kGridSide);
          onehot(v, kShapeCount + kColorCount + 2 * kGridSide, f);
          cells.push_back(std::move(v));
        }
      }
      break;
    }
    case Modality::DOC: {
      const int w = raw_feature_dim(Modality::DOC);
      for (int i = 0; i < kGridCells; ++i) {
        std::vector<float> v(static_cast<std::size_t>(w), 0.0f);
        const auto& cell = doc[static_cast<std::size_t>(i)];
        onehot(v, 0, cell.word);
        onehot(v, kDocWordCount, cell.role);
        onehot(v, kDocWordCount + kDocRoleCount, i / kGridSide);
        onehot(v, kDocWordCount + kDocRoleCount + kGridSide, i % kGridSide);
        cells.push_back(std::move(v));
      }
      break;
    }
  }
  return cells;
}

CurriculumExample generate_example(Modality m, std::uint64_t example_seed,
                                   int distractor_count) {
  Rng rng(example_seed);
  CurriculumExample ex;
  switch (m) {
    case Modality::IMG: ex = gen_img(rng); break;
    case Modality::VID: ex = gen_vid(rng); break;
    case Modality::DOC: ex = gen_doc(rng); break;
    case Modality::TXT: ex = gen_txt(rng); break;
  }
  ex.seed = example_seed;
  ex.target = txt_scene(ex.answer_span);
  for (auto& variant : one_attribute_variants(ex.answer_span, rng, distractor_count)) {
    ex.distractors.push_back(txt_scene(std::move(variant)));
  }
  ex.payload.validate();
  return ex;
}

std::vector<CurriculumExample> generate_dataset(const TaskMix& mix, int count,
                                                std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("generate_dataset: count must be positive");
  mix.validate();
  const double total =
      mix.share(Modality::TXT) + mix.share(Modality::IMG) + mix.share(Modality::VID) +
      mix.share(Modality::DOC);

  // largest-remainder allocation keeps every modality within one example of
  // its requested share
  std::vector<std::pair<Modality, double>> exact;
  for (Modality m : kAllModalities) {
    exact.emplace_back(m, static_cast<double>(count) * mix.share(m) / total);
  }
  std::vector<int> counts(4, 0);
  int assigned = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    counts[i] = static_cast<int>(std::floor(exact[i].second));
    assigned += counts[i];
  }
  std::vector<std::size_t> order = {0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exact[a].second - std::floor(exact[a].second) >
           exact[b].second - std::floor(exact[b].second);
  });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) {
    counts[order[i % 4]] += 1;
  }

  std::vector<Modality> slots;
  for (std::size_t i = 0; i < 4; ++i) {
    for (int j = 0; j < counts[i]; ++j) slots.push_back(exact[i].first);
  }
  Rng shuffle_rng(derive_seed(seed, "dataset.shuffle"));
  for (int i = static_cast<int>(slots.size()) - 1; i > 0; --i) {
    const int j = shuffle_rng.next_int(0, i);
    std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
  }

  std::vector<CurriculumExample> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.push_back(generate_example(slots[i], derive_seed(seed, "example", i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// brute-force verification
// ---------------------------------------------------------------------------

namespace {

bool fail(std::string* why, const std::string& msg) {
  if (why) *why = msg;
  return false;
}

bool expect_tokens(const std::vector<int>& got, const std::vector<int>& expect,
                   const char* what, std::string* why) {
  if (got != expect) {
    return fail(why, std::string("segment mismatch at ") + what + ": got '" +
                         V().render(got) + "' expected '" + V().render(expect) + "'");
  }
  return true;
}

bool verify_img(const CurriculumExample& ex, std::string* why) {
  const auto& grid = ex.payload.img;
  if (ex.question.size() != 6) return fail(why, "img: malformed question");
  const int rel_tok = ex.question[2];
  const int cue_color = ex.question[4], cue_shape = ex.question[5];
  const int rel_i = V().rel_index(rel_tok);
  if (rel_i < 0) return fail(why, "img: question relation token");
  // re-derive: unique cue cell
  Pos cue;
  int found = 0;
  for (int i = 0; i < kGridCells; ++i) {
    const auto& cell = grid[static_cast<std::size_t>(i)];
    if (!cell.empty() && V().color_id(cell.color) == cue_color &&
        V().shape_id(cell.shape) == cue_shape) {
      cue = {i / kGridSide, i % kGridSide};
      ++found;
    }
  }
  if (found != 1) return fail(why, "img: cue pair is not unique in the payload");
  const Pos ans = rel_neighbor(static_cast<Rel>(rel_i), cue);
  if (!in_grid(ans)) return fail(why, "img: answer position out of grid");
  const auto& ans_cell = grid[static_cast<std::size_t>(rc_index(ans.r, ans.c))];
  const std::vector<int> derived_answer = {V().color_id(ans_cell.color),
                                           V().shape_id(ans_cell.shape)};
  if (ex.answer_span != derived_answer) return fail(why, "img: answer span mismatch");

  if (ex.rationale.size() != 4) return fail(why, "img: rationale must have 4 segments");
  if (!expect_tokens(ex.rationale[0],
                     seg({V().id("the"), cue_color, cue_shape, V().id("at"),
                          V().row_id(cue.r), V().col_id(cue.c)}),
                     "img seg1", why)) {
    return false;
  }
  if (!expect_tokens(ex.rationale[1],
                     seg({rel_tok, V().row_id(cue.r), V().col_id(cue.c), V().id("is"),
                          V().row_id(ans.r), V().col_id(ans.c)}),
                     "img seg2", why)) {
    return false;
  }
  if (!expect_tokens(ex.rationale[2],
                     seg({V().row_id(ans.r), V().col_id(ans.c), V().id("holds"),
                          derived_answer[0], derived_answer[1]}),
                     "img seg3", why)) {
    return false;
  }
  std::vector<int> final_seg = {V().id("answer")};
  final_seg.insert(final_seg.end(), derived_answer.begin(), derived_answer.end());
  final_seg.push_back(V().sep_id());
  return expect_tokens(ex.rationale[3], final_seg, "img seg4", why);
}

bool verify_vid(const CurriculumExample& ex, std::string* why) {
  const auto& frames = ex.payload.vid;
  // re-derive mover track by frame diffing
  std::vector<Pos> track;
  GridCell mover;
  for (int f = 0; f + 1 < kVidFrames; ++f) {
    Pos from, to;
    for (int i = 0; i < kGridCells; ++i) {
      const auto& a = frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
      const auto& b = frames[static_cast<std::size_t>(f + 1)][static_cast<std::size_t>(i)];
      if (a == b) continue;
      if (!a.empty() && b.empty()) {
        from = {i / kGridSide, i % kGridSide};
        mover = a;
      }
      if (a.empty() && !b.empty()) to = {i / kGridSide, i % kGridSide};
    }
    if (!from.valid() || !to.valid()) return fail(why, "vid: cannot derive the move");
    if (track.empty()) {
      track.push_back(from);
    } else if (!(track.back() == from)) {
      return fail(why, "vid: track is not continuous");
    }
    track.push_back(to);
  }
  if (ex.rationale.size() != 4) return fail(why, "vid: rationale must have 4 segments");
  const int m_color = V().color_id(mover.color), m_shape = V().shape_id(mover.shape);
  for (int f = 0; f < kVidFrames - 1; ++f) {
    const Pos a = track[static_cast<std::size_t>(f)], b = track[static_cast<std::size_t>(f + 1)];
    Dir d;
    if (b.r == a.r - 1) {
      d = Dir::Up;
    } else if (b.r == a.r + 1) {
      d = Dir::Down;
    } else if (b.c == a.c - 1) {
      d = Dir::Left;
    } else {
      d = Dir::Right;
    }
    if (!expect_tokens(ex.rationale[static_cast<std::size_t>(f)],
                       seg({V().frame_id(f), V().id("to"), V().frame_id(f + 1), m_color,
                            m_shape, V().id("moved"), V().dir_id(d)}),
                       "vid move segment", why)) {
      return false;
    }
  }
  const Pos last = track.back();
  const std::vector<int> derived_answer = {m_color, m_shape, V().id("at"),
                                           V().row_id(last.r), V().col_id(last.c)};
  if (ex.answer_span != derived_answer) return fail(why, "vid: answer span mismatch");
  std::vector<int> final_seg = {V().id("answer")};
  final_seg.insert(final_seg.end(), derived_answer.begin(), derived_answer.end());
  final_seg.push_back(V().sep_id());
  return expect_tokens(ex.rationale[3], final_seg, "vid seg4", why);
}

bool verify_doc(const CurriculumExample& ex, std::string* why) {
  const auto& doc = ex.payload.doc;
  if (ex.question.size() != 6) return fail(why, "doc: malformed question");
  const int cue_word_tok = ex.question[5];
  const int cue_word = V().word_index(cue_word_tok);
  if (cue_word < 0) return fail(why, "doc: question cue word");
  int cue_col = -1, found = 0;
  for (int c = 0; c < kGridSide; ++c) {
    const auto& cell = doc[static_cast<std::size_t>(rc_index(1, c))];
    if (cell.word == cue_word && cell.role == 1) {
      cue_col = c;
      ++found;
    }
  }
  if (found != 1) return fail(why, "doc: cue word not unique in the header row");
  const auto& ans_cell = doc[static_cast<std::size_t>(rc_index(2, cue_col))];
  if (ans_cell.role != 2) return fail(why, "doc: answer cell is not body");
  const std::vector<int> derived_answer = {V().word_id(ans_cell.word), V().id("at"),
                                           V().row_id(2), V().col_id(cue_col)};
  if (ex.answer_span != derived_answer) return fail(why, "doc: answer span mismatch");

  if (ex.rationale.size() != 4) return fail(why, "doc: rationale must have 4 segments");
  if (!expect_tokens(ex.rationale[0],
                     seg({V().role_id(1), cue_word_tok, V().id("at"), V().row_id(1),
                          V().col_id(cue_col)}),
                     "doc seg1", why)) {
    return false;
  }
  if (!expect_tokens(ex.rationale[1],
                     seg({V().rel_id(Rel::Below), V().row_id(1), V().col_id(cue_col),
                          V().id("is"), V().row_id(2), V().col_id(cue_col)}),
                     "doc seg2", why)) {
    return false;
  }
  if (!expect_tokens(ex.rationale[2],
                     seg({V().row_id(2), V().col_id(cue_col), V().id("holds"), V().role_id(2),
                          V().word_id(ans_cell.word)}),
                     "doc seg3", why)) {
    return false;
  }
  std::vector<int> final_seg = {V().id("answer")};
  final_seg.insert(final_seg.end(), derived_answer.begin(), derived_answer.end());
  final_seg.push_back(V().sep_id());
  return expect_tokens(ex.rationale[3], final_seg, "doc seg4", why);
}

bool verify_txt(const CurriculumExample& ex, std::string* why) {
  const auto& payload = ex.payload.txt;
  if (payload.size() % 4 != 0) return fail(why, "txt: malformed payload");
  struct Entity {
    int name, color, shape;
  };
  std::vector<Entity> entities;
  for (std::size_t i = 0; i < payload.size(); i += 4) {
    if (payload[i + 3] != V().sep_id()) return fail(why, "txt: payload separator");
    entities.push_back({payload[i], payload[i + 1], payload[i + 2]});
  }
  if (ex.question.size() != 6) return fail(why, "txt: malformed question");
  const int q_color = ex.question[3], q_shape = ex.question[5];
  int match = -1, found = 0;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].color == q_color && entities[i].shape == q_shape) {
      match = static_cast<int>(i);
      ++found;
    }
  }
  if (found != 1) return fail(why, "txt: queried attributes are not unique");
  const auto& m = entities[static_cast<std::size_t>(match)];
  const std::vector<int> derived_answer = {m.name, q_color, q_shape};
  if (ex.answer_span != derived_answer) return fail(why, "txt: answer span mismatch");

  if (ex.rationale.size() != entities.size()) {
    return fail(why, "txt: rationale segment count");
  }
  std::size_t seg_i = 0;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (static_cast<int>(i) == match) continue;
    if (!expect_tokens(ex.rationale[seg_i],
                       seg({entities[i].name, V().id("is"), entities[i].color,
                            entities[i].shape}),
                       "txt entity segment", why)) {
      return false;
    }
    ++seg_i;
  }
  std::vector<int> final_seg = {V().id("answer")};
  final_seg.insert(final_seg.end(), derived_answer.begin(), derived_answer.end());
  final_seg.push_back(V().sep_id());
  return expect_tokens(ex.rationale.back(), final_seg, "txt final segment", why);
}

}  // namespace

bool verify_example(const CurriculumExample& ex, std::string* why) {
  try {
    ex.payload.validate();
  } catch (const std::exception& e) {
    return fail(why, e.what());
  }
  if (ex.rationale.size() < 2 || ex.rationale.size() > 4) {
    return fail(why, "rationale must have 2-4 segments");
  }
  for (const auto& s : ex.rationale) {
    if (s.empty() || s.back() != V().sep_id()) {
      return fail(why, "every rationale segment must end with the step delimiter");
    }
  }
  // the final segment must name the answer span
  const auto& last = ex.rationale.back();
  if (last.size() < ex.answer_span.size() + 2 ||
      !std::equal(ex.answer_span.begin(), ex.answer_span.end(), last.begin() + 1)) {
    return fail(why, "final segment does not name the answer span");
  }
  if (ex.target.txt != ex.answer_span) {
    return fail(why, "positive target content must equal the answer span");
  }
  switch (ex.modality) {
    case Modality::IMG: return verify_img(ex, why);
    case Modality::VID: return verify_vid(ex, why);
    case Modality::DOC: return verify_doc(ex, why);
    case Modality::TXT: return verify_txt(ex, why);
  }
  return fail(why, "unknown modality");
}

// ---------------------------------------------------------------------------
// stage plan and rewriter
// ---------------------------------------------------------------------------

std::vector<StagePlan> make_stage_plan(int total_stages, double total_epochs, int k,
                                       const std::vector<double>* fraction_override,
                                       const std::vector<int>* budget_override) {
  if (total_stages < 1) throw std::invalid_argument("stage plan: need at least one stage");
  if (total_epochs < total_stages) {
    throw std::invalid_argument("stage plan: epochs must be >= stage count");
  }
  if (k < 0) throw std::invalid_argument("stage plan: K must be >= 0");
  const int s_count = total_stages + 1;
  if (fraction_override && static_cast<int>(fraction_override->size()) != s_count) {
    throw std::invalid_argument("stage plan: fraction override must cover stages 0..S");
  }
  if (budget_override && static_cast<int>(budget_override->size()) != s_count) {
    throw std::invalid_argument("stage plan: budget override must cover stages 0..S");
  }

  const double e0 = 0.6 * total_epochs;
  const double e_mid_total = total_stages > 1 ? 0.2 * total_epochs : 0.0;
  const double e_final = total_epochs - e0 - e_mid_total;

  std::vector<StagePlan> plan;
  double prev_f = -1.0;
  int prev_k = -1;
  for (int s = 0; s <= total_stages; ++s) {
    StagePlan p;
    p.stage = s;
    p.total_stages = total_stages;
    p.replaced_fraction = fraction_override
                              ? (*fraction_override)[static_cast<std::size_t>(s)]
                              : static_cast<double>(s) / total_stages;
    p.latent_budget = budget_override
                          ? (*budget_override)[static_cast<std::size_t>(s)]
                          : static_cast<int>(std::ceil(p.replaced_fraction * k - 1e-12));
    if (s == 0) {
      p.epochs = e0;
    } else if (s == total_stages) {
      p.epochs = e_final;
    } else {
      p.epochs = e_mid_total / (total_stages - 1);
    }
    if (p.replaced_fraction < prev_f || p.latent_budget < prev_k) {
      throw std::invalid_argument("stage plan: fractions and budgets must be non-decreasing");
    }
    prev_f = p.replaced_fraction;
    prev_k = p.latent_budget;
    plan.push_back(p);
  }
  if (plan.front().replaced_fraction != 0.0 || plan.back().replaced_fraction != 1.0) {
    throw std::invalid_argument("stage plan: f_0 must be 0 and f_S must be 1");
  }
  if (plan.back().latent_budget != (budget_override ? plan.back().latent_budget : k)) {
    throw std::invalid_argument("stage plan: K_S must equal K");
  }
  return plan;
}

SerializedSequence rewrite_for_stage(const CurriculumExample& ex, const StagePlan& plan,
                                     const lre::model::SpecialTokens& tokens) {
  (void)tokens;
  SerializedSequence ser;
  ser.modality = ex.modality;
  if (ex.modality == Modality::TXT) {
    ser.payload_tokens = ex.payload.txt;
  } else {
    ser.has_feature_payload = true;
  }
  ser.question_tokens = ex.question;
  ser.ct_count = plan.latent_budget;

  const bool fully_latent = plan.replaced_fraction >= 1.0;
  if (!fully_latent) {
    const int n_seg = static_cast<int>(ex.rationale.size());
    const int replaced =
        static_cast<int>(std::ceil(plan.replaced_fraction * n_seg - 1e-12));
    for (int s = replaced; s < n_seg; ++s) {
      const auto& segment = ex.rationale[static_cast<std::size_t>(s)];
      ser.suffix_tokens.insert(ser.suffix_tokens.end(), segment.begin(), segment.end());
    }
    ser.suffix_tokens.insert(ser.suffix_tokens.end(), ex.answer_span.begin(),
                             ex.answer_span.end());
    ser.suffix_supervised.assign(ser.suffix_tokens.size(), 1);
  }
  return ser;
}

SerializedSequence serialize_target_for_stage(const SceneSpec& target, const StagePlan& plan,
                                              const lre::model::SpecialTokens& tokens) {
  (void)tokens;
  if (target.modality != Modality::TXT) {
    throw std::invalid_argument("targets are textual scenes");
  }
  SerializedSequence ser;
  ser.modality = Modality::TXT;
  ser.payload_tokens = target.txt;
  ser.ct_count = plan.latent_budget;
  if (plan.replaced_fraction < 1.0) {
    // the target's supervised suffix is its own content span
    ser.suffix_tokens = target.txt;
    ser.suffix_supervised.assign(ser.suffix_tokens.size(), 1);
  }
  return ser;
}

std::vector<FlatElement> flatten(const SerializedSequence& ser,
                                 const lre::model::SpecialTokens& tokens) {
  std::vector<FlatElement> out;
  if (ser.has_feature_payload) {
    const int cells = ser.modality == Modality::VID ? kVidFrames * kGridCells : kGridCells;
    for (int i = 0; i < cells; ++i) out.push_back({true, -1, false});
  }
  for (int id : ser.payload_tokens) out.push_back({false, id, false});
  for (int id : ser.question_tokens) out.push_back({false, id, false});
  out.push_back({false, tokens.anchor_id, false});
  out.push_back({false, tokens.slt_id, false});
  for (int i = 0; i < ser.ct_count; ++i) out.push_back({false, tokens.ct_id, false});
  out.push_back({false, tokens.elt_id, false});
  for (std::size_t i = 0; i < ser.suffix_tokens.size(); ++i) {
    out.push_back({false, ser.suffix_tokens[i], ser.suffix_supervised[i] != 0});
  }
  out.push_back({false, tokens.gen_id, false});
  return out;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

json scene_to_json(const SceneSpec& s) {
  json j;
  j["modality"] = to_string(s.modality);
  switch (s.modality) {
    case Modality::IMG: {
      json cells = json::array();
      for (const auto& c : s.img) cells.push_back({c.shape, c.color});
      j["img"] = std::move(cells);
      break;
    }
    case Modality::VID: {
      json frames = json::array();
      for (const auto& f : s.vid) {
        json cells = json::array();
        for (const auto& c : f) cells.push_back({c.shape, c.color});
        frames.push_back(std::move(cells));
      }
      j["vid"] = std::move(frames);
      break;
    }
    case Modality::DOC: {
      json cells = json::array();
      for (const auto& c : s.doc) cells.push_back({c.word, c.role});
      j["doc"] = std::move(cells);
      break;
    }
    case Modality::TXT: j["txt"] = s.txt; break;
  }
  return j;
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.modality = modality_from_string(j.at("modality").get<std::string>());
  switch (s.modality) {
    case Modality::IMG:
      for (const auto& c : j.at("img")) s.img.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
      break;
    case Modality::VID:
      for (const auto& f : j.at("vid")) {
        std::vector<GridCell> frame;
        for (const auto& c : f) frame.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
        s.vid.push_back(std::move(frame));
      }
      break;
    case Modality::DOC:
      for (const auto& c : j.at("doc")) s.doc.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
      break;
    case Modality::TXT: s.txt = j.at("txt").get<std::vector<int>>(); break;
  }
  return s;
}

}  // namespace

std::string dataset_to_jsonl(const std::vector<CurriculumExample>& examples,
                             const DatasetHeader& header) {
  std::ostringstream out;
  json h;
  h["format"] = header.format;
  h["count"] = header.count;
  h["seed"] = header.seed;
  h["task_mix"] = {{"txt", header.mix.txt},
                   {"img", header.mix.img},
                   {"vid", header.mix.vid},
                   {"doc", header.mix.doc}};
  out << h.dump() << '\n';
  for (const auto& ex : examples) {
    json j;
    j["seed"] = ex.seed;
    j["modality"] = to_string(ex.modality);
    j["payload"] = scene_to_json(ex.payload);
    j["question"] = ex.question;
    j["rationale"] = ex.rationale;
    j["answer"] = ex.answer_span;
    j["target"] = scene_to_json(ex.target);
    json ds = json::array();
    for (const auto& d : ex.distractors) ds.push_back(scene_to_json(d));
    j["distractors"] = std::move(ds);
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<CurriculumExample> dataset_from_jsonl(const std::string& text,
                                                  DatasetHeader* header_out) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: missing header line");
  const json h = json::parse(line);
  DatasetHeader header;
  header.format = h.at("format").get<std::string>();
  if (header.format != "lre-dataset-v1") {
    throw std::runtime_error("dataset: unsupported format '" + header.format + "'");
  }
  header.count = h.at("count").get<int>();
  header.seed = h.at("seed").get<std::uint64_t>();
  header.mix.txt = h.at("task_mix").at("txt").get<double>();
  header.mix.img = h.at("task_mix").at("img").get<double>();
  header.mix.vid = h.at("task_mix").at("vid").get<double>();
  header.mix.doc = h.at("task_mix").at("doc").get<double>();

  std::vector<CurriculumExample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    CurriculumExample ex;
    ex.seed = j.at("seed").get<std::uint64_t>();
    ex.modality = modality_from_string(j.at("modality").get<std::string>());
    ex.payload = scene_from_json(j.at("payload"));
    ex.question = j.at("question").get<std::vector<int>>();
    ex.rationale = j.at("rationale").get<std::vector<std::vector<int>>>();
    ex.answer_span = j.at("answer").get<std::vector<int>>();
    ex.target = scene_from_json(j.at("target"));
    for (const auto& d : j.at("distractors")) ex.distractors.push_back(scene_from_json(d));
    out.push_back(std::move(ex));
  }
  if (static_cast<int>(out.size()) != header.count) {
    throw std::runtime_error("dataset: header count does not match record count");
  }
  if (header_out) *header_out = header;
  return out;
}

void save_dataset(const std::string& path, const std::vector<CurriculumExample>& examples,
                  const DatasetHeader& header) {
  atomic_write_file(path, dataset_to_jsonl(examples, header));
}

std::vector<CurriculumExample> load_dataset(const std::string& path,
                                            DatasetHeader* header_out) {
  return dataset_from_jsonl(read_file(path), header_out);
}

}  // namespace lre::data

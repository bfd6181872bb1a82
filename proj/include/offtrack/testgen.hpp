#pragma once

// Construction of recoverability and guidability test items from solo
// trajectory stores.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "offtrack/core.hpp"
#include "offtrack/segmenter.hpp"
#include "offtrack/verifier.hpp"

namespace offtrack {

struct GridConfig {
  std::vector<double> m_grid{0.0, 0.2, 0.4, 0.6, 0.8};
  double n_default = 0.2;
  std::vector<double> n_grid{0.2, 0.4, 0.6, 0.8};
  int og_count = 200;
  int steer_count = 50;
  bool preserve_first_paragraph = false;

  void validate() const {
    auto in_unit = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (!std::all_of(m_grid.begin(), m_grid.end(), in_unit) || !std::all_of(n_grid.begin(), n_grid.end(), in_unit) ||
        !in_unit(n_default))
      throw Error(ErrorCode::kInvalidArgument, "grid fractions must lie in [0,1]");
    if (std::any_of(n_grid.begin(), n_grid.end(), [](double f) { return f == 0.0; }) || n_default == 0.0)
      throw Error(ErrorCode::kInvalidArgument, "steer fractions must be > 0");
    if (og_count < 1 || steer_count < 1) throw Error(ErrorCode::kInvalidArgument, "grid counts must be >= 1");
  }
};

inline void to_json(json& j, const GridConfig& g) {
  j = json{{"m_grid", g.m_grid},
           {"n_default", g.n_default},
           {"n_grid", g.n_grid},
           {"og_count", g.og_count},
           {"steer_count", g.steer_count},
           {"preserve_first_paragraph", g.preserve_first_paragraph}};
}
inline void from_json(const json& j, GridConfig& g) {
  GridConfig d;
  g.m_grid = j.value("m_grid", d.m_grid);
  g.n_default = j.value("n_default", d.n_default);
  g.n_grid = j.value("n_grid", d.n_grid);
  g.og_count = j.value("og_count", d.og_count);
  g.steer_count = j.value("steer_count", d.steer_count);
  g.preserve_first_paragraph = j.value("preserve_first_paragraph", d.preserve_first_paragraph);
  g.validate();
}

// Cuts `text` (a trajectory of `model`) to a fraction of its tokens.
using Truncator = std::function<std::string(const std::string& model, std::string_view text, double fraction)>;

inline Truncator whitespace_truncator() {
  return [](const std::string&, std::string_view text, double fraction) { return truncate_fraction(text, fraction); };
}

// ---------------------------------------------------------------------------
// Question selection

enum class SelectionMode { kShared, kIndividual };

inline std::string_view to_string(SelectionMode m) { return m == SelectionMode::kShared ? "shared" : "individual"; }
inline SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "shared") return SelectionMode::kShared;
  if (s == "individual") return SelectionMode::kIndividual;
  throw Error(ErrorCode::kInvalidArgument, "selection mode must be shared|individual, got " + std::string(s));
}

using ProfilesByModel = std::map<std::string, std::vector<SoloProfile>>;

namespace detail {

inline std::unordered_map<std::string, const SoloProfile*> index_profiles(const std::vector<SoloProfile>& profiles) {
  std::unordered_map<std::string, const SoloProfile*> idx;
  for (const auto& p : profiles) idx[p.question_id] = &p;
  return idx;
}

inline const SoloProfile& profile_for(const std::unordered_map<std::string, const SoloProfile*>& idx, const std::string& model,
                                      const std::string& qid) {
  auto it = idx.find(qid);
  if (it == idx.end()) throw Error(ErrorCode::kIncomplete, "no profile of " + model + " for " + qid);
  return *it->second;
}

inline QuestionSet subset_in_order(const QuestionSet& pool, const std::set<std::string>& keep, std::string name) {
  QuestionSet out(std::move(name), {});
  for (const auto& q : pool)
    if (keep.count(q.id)) out.add(q);
  return out;
}

}  // namespace detail

struct RecoverabilitySelection {
  SelectionMode mode = SelectionMode::kShared;
  std::string target_model;  // INDIVIDUAL only
  std::optional<int> target_count;
  // Optional per-question solve rate in (0,1]; INDIVIDUAL sampling then
  // weights questions by its inverse.
  std::map<std::string, double> strata;
  std::uint64_t seed = 0;
};

// Fully solved questions (k of k) for every model (SHARED) or for the target
// model (INDIVIDUAL), down-sampled to target_count when requested.
inline QuestionSet select_recoverability_questions(const QuestionSet& pool, const ProfilesByModel& profiles,
                                                   const RecoverabilitySelection& sel) {
  std::vector<std::string> models;
  if (sel.mode == SelectionMode::kShared) {
    for (const auto& [m, p] : profiles) models.push_back(m);
  } else {
    if (!profiles.count(sel.target_model)) throw Error(ErrorCode::kIncomplete, "no profiles for " + sel.target_model);
    models.push_back(sel.target_model);
  }
  if (models.empty()) throw Error(ErrorCode::kIncomplete, "no solo profiles supplied");

  std::vector<std::unordered_map<std::string, const SoloProfile*>> indexes;
  for (const auto& m : models) indexes.push_back(detail::index_profiles(profiles.at(m)));

  std::vector<std::string> eligible;
  for (const auto& q : pool) {
    bool all = true;
    for (std::size_t i = 0; i < models.size() && all; ++i) {
      const auto& p = detail::profile_for(indexes[i], models[i], q.id);
      all = p.solve_count == p.k;
    }
    if (all) eligible.push_back(q.id);
  }

  const std::string name = "recoverability-" + std::string(to_string(sel.mode));
  std::set<std::string> keep(eligible.begin(), eligible.end());
  if (sel.target_count) {
    const auto needed = static_cast<std::size_t>(*sel.target_count);
    if (eligible.size() < needed)
      throw Error(ErrorCode::kInsufficientPool, std::to_string(eligible.size()) + ", " + std::to_string(needed));
    if (eligible.size() > needed) {
      DeterministicRng rng(derive_seed(sel.seed, name));
      std::vector<std::pair<double, std::string>> keyed;
      for (const auto& id : eligible) {
        double key = rng.unit_open();
        if (sel.mode == SelectionMode::kIndividual && !sel.strata.empty()) {
          // Weighted sampling without replacement: key = u^(1/w), w = 1/rate.
          auto it = sel.strata.find(id);
          const double rate = it == sel.strata.end() ? 1.0 : std::clamp(it->second, 1e-9, 1.0);
          key = std::pow(key, rate);
        }
        keyed.emplace_back(key, id);
      }
      std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      keep.clear();
      for (std::size_t i = 0; i < needed; ++i) keep.insert(keyed[i].second);
    }
  }
  return detail::subset_in_order(pool, keep, name);
}

// solve_count <= 1 out of k. May be empty.
inline QuestionSet select_guidability_questions(const QuestionSet& pool, const std::vector<SoloProfile>& profiles) {
  const auto idx = detail::index_profiles(profiles);
  std::set<std::string> keep;
  for (const auto& q : pool) {
    auto it = idx.find(q.id);
    if (it == idx.end()) continue;
    if (it->second->solve_count <= 1) keep.insert(q.id);
  }
  return detail::subset_in_order(pool, keep, "guidability-individual");
}

// Intersection of the per-model guidability sets.
inline QuestionSet select_guidability_shared(const QuestionSet& pool, const ProfilesByModel& profiles) {
  std::optional<std::set<std::string>> common;
  for (const auto& [model, list] : profiles) {
    std::set<std::string> ids;
    for (const auto& q : select_guidability_questions(pool, list)) ids.insert(q.id);
    if (!common) {
      common = std::move(ids);
    } else {
      std::set<std::string> both;
      std::set_intersection(common->begin(), common->end(), ids.begin(), ids.end(), std::inserter(both, both.end()));
      common = std::move(both);
    }
  }
  return detail::subset_in_order(pool, common.value_or(std::set<std::string>{}), "guidability-shared");
}

// ---------------------------------------------------------------------------
// Items

inline bool steer_contains_answer(std::string_view steer_prefix, std::string_view gold) {
  return contains_equivalent_answer(steer_prefix, gold);
}

inline std::string make_item_id(const SteeredItem& it) {
  json j{{"kind", to_string(it.kind)},
         {"question_id", it.question_id},
         {"og_source", it.og_source ? json(*it.og_source) : json(nullptr)},
         {"steer_source", it.steer_source},
         {"spec", it.spec},
         {"guide", it.guide}};
  return content_id(j.dump());
}

struct BuildResult {
  std::vector<SteeredItem> items;
  // One line per skipped (question, guide) pair or other omission.
  std::vector<std::string> skipped;
};

// Original-trajectory prefix under a steer spec.
inline std::string og_prefix(const Truncator& cut, const Trajectory& og, const SteerSpec& spec) {
  std::string fraction_prefix = spec.m_fraction > 0.0 ? cut(og.model, og.reasoning, spec.m_fraction) : std::string{};
  if (!spec.preserve_first_paragraph) return fraction_prefix;
  std::string head = first_paragraph(og.reasoning);
  if (spec.m_fraction == 0.0) return head;
  return head.size() > fraction_prefix.size() ? head : fraction_prefix;
}

inline const Trajectory* first_correct(const std::vector<const Trajectory*>& list) {
  const Trajectory* best = nullptr;
  for (const auto* t : list)
    if (t->verdict == VerdictLabel::kCorrect && (!best || t->sample_index < best->sample_index)) best = t;
  return best;
}

inline std::unordered_map<std::string, std::vector<const Trajectory*>> by_question(const std::vector<Trajectory>& store) {
  std::unordered_map<std::string, std::vector<const Trajectory*>> out;
  for (const auto& t : store) out[t.question_id].push_back(&t);
  return out;
}

// steer_count trajectories (one per question, lowest sample index) drawn
// uniformly from the questions of the store, excluding `avoid` when enough
// other questions exist.
inline std::vector<Trajectory> build_distractor_pool(const std::vector<Trajectory>& store, int steer_count, std::uint64_t seed,
                                                     const std::set<std::string>& avoid = {}) {
  std::map<std::string, const Trajectory*> first;
  for (const auto& t : store) {
    if (t.reasoning.empty()) continue;
    auto& slot = first[t.question_id];
    if (!slot || t.sample_index < slot->sample_index) slot = &t;
  }
  std::vector<std::string> preferred, rest;
  for (const auto& [qid, t] : first) (avoid.count(qid) ? rest : preferred).push_back(qid);
  DeterministicRng rng(derive_seed(seed, "distractor-pool"));
  rng.shuffle(preferred);
  rng.shuffle(rest);
  preferred.insert(preferred.end(), rest.begin(), rest.end());
  if (preferred.size() > static_cast<std::size_t>(steer_count)) preferred.resize(static_cast<std::size_t>(steer_count));
  std::sort(preferred.begin(), preferred.end());
  std::vector<Trajectory> pool;
  for (const auto& qid : preferred) pool.push_back(*first.at(qid));
  return pool;
}

// For every (question, m): og prefix of the question's first correct
// trajectory spliced with the distractor prefix at n_default. Distractors
// are drawn per question without replacement from the pool, skipping any
// whose question has an equivalent gold answer.
inline BuildResult build_recoverability_items(const QuestionSet& selected, const QuestionSet& all_questions,
                                              const std::vector<Trajectory>& og_store, const std::vector<Trajectory>& distractor_pool,
                                              const GridConfig& grid, std::uint64_t seed, const Truncator& cut = whitespace_truncator()) {
  grid.validate();
  const auto og_by_q = by_question(og_store);
  BuildResult out;
  for (const auto& q : selected) {
    auto found = og_by_q.find(q.id);
    const Trajectory* og = found == og_by_q.end() ? nullptr : first_correct(found->second);
    if (!og) throw Error(ErrorCode::kNoCorrectOg, q.id);

    std::vector<std::size_t> order(distractor_pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    DeterministicRng rng(derive_seed(seed, "recoverability/" + q.id));
    rng.shuffle(order);
    std::vector<const Trajectory*> eligible;
    for (std::size_t i : order) {
      const Trajectory& d = distractor_pool[i];
      if (d.question_id == q.id) continue;
      if (normalize_equal(all_questions.at(d.question_id).gold_answer, q.gold_answer)) continue;
      eligible.push_back(&d);
    }
    if (eligible.empty()) throw Error(ErrorCode::kDistractorCollision, q.id);

    for (std::size_t mi = 0; mi < grid.m_grid.size(); ++mi) {
      const Trajectory& d = *eligible[mi % eligible.size()];
      SteeredItem it;
      it.kind = ItemKind::kRecoverability;
      it.question_id = q.id;
      it.og_source = og->ref();
      it.steer_source = d.ref();
      it.steer_origin_question_id = d.question_id;
      it.spec = SteerSpec{grid.m_grid[mi], grid.n_default, grid.preserve_first_paragraph};
      const std::string steer = cut(d.model, d.reasoning, grid.n_default);
      it.prefix_text = splice(og_prefix(cut, *og, it.spec), steer);
      it.steer_contains_answer = steer_contains_answer(steer, q.gold_answer);
      it.item_id = make_item_id(it);
      out.items.push_back(std::move(it));
    }
  }
  return out;
}

// Guide stores in configuration order.
using GuideStores = std::vector<std::pair<std::string, std::vector<Trajectory>>>;

// For every (question, guide with a correct trajectory, n): the first n of
// the guide's first correct trajectory. No original prefix.
inline BuildResult build_guidability_items(const QuestionSet& selected, const GuideStores& guides, const GridConfig& grid,
                                           const Truncator& cut = whitespace_truncator()) {
  grid.validate();
  std::vector<std::unordered_map<std::string, std::vector<const Trajectory*>>> indexed;
  for (const auto& [name, store] : guides) indexed.push_back(by_question(store));
  BuildResult out;
  for (const auto& q : selected) {
    for (std::size_t gi = 0; gi < guides.size(); ++gi) {
      const auto& guide = guides[gi].first;
      auto found = indexed[gi].find(q.id);
      const Trajectory* t = found == indexed[gi].end() ? nullptr : first_correct(found->second);
      if (!t) {
        out.skipped.push_back(std::string(to_string(ErrorCode::kNoCorrectGuide)) + "(" + q.id + ", " + guide + ")");
        continue;
      }
      for (double n : grid.n_grid) {
        SteeredItem it;
        it.kind = ItemKind::kGuidability;
        it.question_id = q.id;
        it.steer_source = t->ref();
        it.steer_origin_question_id = q.id;
        it.spec = SteerSpec{0.0, n, false};
        it.guide = guide;
        it.prefix_text = cut(t->model, t->reasoning, n);
        if (it.prefix_text.empty()) {
          out.skipped.push_back("EMPTY_STEER(" + q.id + ", " + guide + ", " + json(n).dump() + ")");
          continue;
        }
        it.steer_contains_answer = steer_contains_answer(it.prefix_text, q.gold_answer);
        it.item_id = make_item_id(it);
        out.items.push_back(std::move(it));
      }
    }
  }
  return out;
}

// Recomputes an item's prefix from its source trajectories.
inline std::string resplice(const SteeredItem& it, const std::function<const Trajectory&(const TrajectoryRef&)>& lookup,
                            const Truncator& cut = whitespace_truncator()) {
  const Trajectory& steer_src = lookup(it.steer_source);
  const std::string steer = cut(steer_src.model, steer_src.reasoning, it.spec.n_fraction);
  if (it.kind == ItemKind::kGuidability) return steer;
  const Trajectory& og = lookup(*it.og_source);
  return splice(og_prefix(cut, og, it.spec), steer);
}

}  // namespace offtrack

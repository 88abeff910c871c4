#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "texsr/atlas.hpp"
#include "texsr/error.hpp"
#include "texsr/solver.hpp"

namespace texsr {

/// Solver-ready bundle: one data term per view and the averaged initial atlas.
struct MultiViewProblem {
  Dims texture;
  std::vector<ViewTerm> terms;
  TextureAtlas initial;
};

inline std::vector<ViewTerm> make_view_terms(std::span<const ViewObservation> views,
                                             std::span<const ViewChain> chains) {
  std::vector<ViewTerm> terms;
  terms.reserve(views.size());
  for (const auto& v : views) {
    if (v.chain >= chains.size()) {
      throw StructuralError("view " + std::to_string(v.view_id) + " refers to missing chain " +
                            std::to_string(v.chain));
    }
    terms.push_back({v.view_id, chains[v.chain], v.image, v.visibility});
  }
  return terms;
}

inline MultiViewProblem assemble_problem(std::span<const ViewObservation> views,
                                         std::span<const ViewChain> chains) {
  if (views.empty()) throw UsageError("assemble_problem: no views");
  MultiViewProblem p;
  p.terms = make_view_terms(views, chains);
  p.texture = p.terms.front().chain.dims().texture;
  std::vector<SparseLinearMap> pullbacks;
  pullbacks.reserve(views.size());
  for (const auto& t : p.terms) pullbacks.push_back(build_pullback(t.chain, t.visibility));
  p.initial = init_atlas_average(views, pullbacks, p.texture);
  return p;
}

}  // namespace texsr

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dr/data.hpp"
#include "dr/rng.hpp"

namespace dr {

/// One element of the continual stream: its own train/val/test splits and
/// the classes it carries.
struct Experience {
  int index = 0;  // 1-based position in the stream
  Dataset train, val, test;
  std::optional<int> task_label;
  std::vector<int> classes_present;
};

enum class StreamKind { domain_incremental, class_incremental };

inline const char* stream_kind_name(StreamKind k) {
  return k == StreamKind::domain_incremental ? "domain-incremental"
                                             : "class-incremental";
}

struct Stream {
  StreamKind kind = StreamKind::domain_incremental;
  std::uint64_t seed = 0;
  std::vector<Experience> experiences;
  // metadata for reproducibility reports
  std::vector<std::vector<std::size_t>> permutations;  // D-IL, empty = identity
  std::vector<int> class_order;                        // C-IL

  std::size_t T() const { return experiences.size(); }
};

namespace detail {

inline Dataset permute_pixels(const Dataset& ds,
                              const std::vector<std::size_t>& perm) {
  if (ds.size() == 0) return ds;
  const std::size_t d = ds.example_numel();
  if (perm.size() != d)
    throw ContractError("permute_pixels: permutation length " +
                        std::to_string(perm.size()) + " vs " +
                        std::to_string(d) + " pixels");
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  out.labels = ds.labels;
  out.images = Tensor<float>(ds.images.shape());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const float* src = ds.images.data() + i * d;
    float* dst = out.images.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[perm[j]];
  }
  return out;
}

inline std::vector<int> all_classes(const Dataset& ds) {
  std::set<int> s(ds.labels.begin(), ds.labels.end());
  return {s.begin(), s.end()};
}

}  // namespace detail

/// Domain-incremental stream: experience 1 is the base data unpermuted;
/// each later experience applies one fixed seed-derived pixel permutation
/// to train/val/test alike. Labels and classes are unchanged.
inline Stream permuted_stream(const DatasetTriple& base, std::size_t T,
                              std::uint64_t seed) {
  if (T < 1) throw ContractError("permuted_stream: T >= 1");
  Stream s;
  s.kind = StreamKind::domain_incremental;
  s.seed = seed;
  const std::vector<int> classes = detail::all_classes(base.train);
  for (std::size_t t = 1; t <= T; ++t) {
    Experience e;
    e.index = static_cast<int>(t);
    e.classes_present = classes;
    if (t == 1) {
      e.train = base.train;
      e.val = base.val;
      e.test = base.test;
      s.permutations.emplace_back();
    } else {
      Rng rng(derive_seed(seed, 0x9e11u, t));
      std::vector<std::size_t> perm =
          rng.permutation(base.train.example_numel());
      e.train = detail::permute_pixels(base.train, perm);
      e.val = detail::permute_pixels(base.val, perm);
      e.test = detail::permute_pixels(base.test, perm);
      s.permutations.push_back(std::move(perm));
    }
    s.experiences.push_back(std::move(e));
  }
  return s;
}

/// Class-incremental stream: `order` is a permutation of all classes,
/// grouped classes_per_exp at a time; each experience holds exactly the
/// examples of its classes, labels kept in the original space.
inline Stream split_stream(const DatasetTriple& base,
                           std::size_t classes_per_exp,
                           const std::vector<int>& order) {
  if (classes_per_exp < 1) throw ContractError("split_stream: group >= 1");
  std::vector<int> classes = detail::all_classes(base.train);
  std::vector<int> sorted_order = order;
  std::sort(sorted_order.begin(), sorted_order.end());
  if (sorted_order != classes)
    throw ContractError("split_stream: order is not a permutation of the "
                        "dataset's classes");
  if (order.size() % classes_per_exp)
    throw ContractError("split_stream: " + std::to_string(order.size()) +
                        " classes not divisible into groups of " +
                        std::to_string(classes_per_exp));
  Stream s;
  s.kind = StreamKind::class_incremental;
  s.class_order = order;
  auto filter = [](const Dataset& ds, const std::set<int>& keep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (keep.count(ds.labels[i])) idx.push_back(i);
    return take(ds, idx);
  };
  const std::size_t T = order.size() / classes_per_exp;
  for (std::size_t t = 0; t < T; ++t) {
    std::set<int> keep(order.begin() + t * classes_per_exp,
                       order.begin() + (t + 1) * classes_per_exp);
    Experience e;
    e.index = static_cast<int>(t + 1);
    e.classes_present = {keep.begin(), keep.end()};
    e.train = filter(base.train, keep);
    e.val = filter(base.val, keep);
    e.test = filter(base.test, keep);
    s.experiences.push_back(std::move(e));
  }
  return s;
}

inline std::vector<int> ascending_class_order(int num_classes) {
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c)
    order[static_cast<std::size_t>(c)] = c;
  return order;
}

/// One shuffled pass over a train set: every index appears exactly once,
/// grouped into batches, the last possibly short.
inline std::vector<std::vector<std::size_t>> iterate_single_pass(
    const Experience& exp, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ContractError("iterate_single_pass: batch >= 1");
  Rng rng(derive_seed(seed, 0xbadc0ffeu, static_cast<std::uint64_t>(exp.index)));
  std::vector<std::size_t> perm = rng.permutation(exp.train.size());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t stop = std::min(perm.size(), start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return batches;
}

}  // namespace dr

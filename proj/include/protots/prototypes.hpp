#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "protots/parameters.hpp"
#include "protots/tensor.hpp"

namespace protots {

using NodeId = std::uint32_t;

/// One prototype: an embedding used for matching and a period-long pattern
/// decoded into the forecast.
struct PrototypeNode {
    NodeId id = 0;
    std::optional<NodeId> parent;
    std::size_t level = 1;  // roots are level 1
    Tensor mu;
    Tensor pattern;
    std::vector<NodeId> children;
    std::string label;
    bool pattern_locked = false;

    bool is_leaf() const { return children.empty(); }
};

/// Prototype hierarchy. Tensors are shared handles, so copying a tree
/// shares parameters; clone() produces an independent snapshot.
class PrototypeTree {
public:
    PrototypeTree() = default;
    PrototypeTree(std::size_t n_roots, std::size_t dim, std::size_t period, double mu_stddev,
                  double pattern_stddev, std::mt19937_64& rng);

    static PrototypeTree from_nodes(std::vector<PrototypeNode> nodes, std::vector<NodeId> roots,
                                    NodeId next_id, std::size_t dim, std::size_t period);

    const std::vector<NodeId>& roots() const { return roots_; }
    const PrototypeNode& node(NodeId id) const;
    PrototypeNode& node(NodeId id);
    bool contains(NodeId id) const { return nodes_.contains(id); }

    // Leaves in depth-first order following root and child order.
    std::vector<NodeId> leaves() const;
    std::vector<NodeId> node_ids() const;
    std::size_t size() const { return nodes_.size(); }
    std::size_t depth() const;
    std::size_t dim() const { return dim_; }
    std::size_t period() const { return period_; }
    NodeId next_id() const { return next_id_; }

    /// Turns leaf `id` into an internal node with `m` children. Each child
    /// copies the parent pattern and jitters the parent embedding with
    /// N(0, jitter^2) noise drawn from `seed`. Returns the child ids.
    std::vector<NodeId> split(NodeId id, std::size_t m, std::uint64_t seed, double jitter = 0.01);

    void edit_pattern(NodeId id, std::span<const double> pattern, bool lock);
    void set_label(NodeId id, std::string label);

    // All embeddings are trainable; patterns only on unlocked leaves.
    ParameterList parameters() const;
    PrototypeTree clone() const;

    // Throws ContractError when the structure is inconsistent.
    void validate() const;

private:
    std::map<NodeId, PrototypeNode> nodes_;
    std::vector<NodeId> roots_;
    NodeId next_id_ = 0;
    std::size_t dim_ = 0;
    std::size_t period_ = 0;
};

// Softmax over negative squared distances to the root embeddings.
Tensor root_similarity(Tape& tape, const Tensor& z, const PrototypeTree& tree);
// Softmax restricted to the children of `parent`.
Tensor child_similarity(Tape& tape, const Tensor& z, const PrototypeTree& tree, NodeId parent);
// out[t] = p[(phase0 + t) mod T].
Tensor align_pattern(Tape& tape, const Tensor& pattern, std::size_t phase0, std::size_t horizon);
// Weighted sum of the aligned root patterns.
Tensor root_predict(Tape& tape, const Tensor& z, const PrototypeTree& tree, std::size_t phase0,
                    std::size_t horizon);

struct PathWeights {
    std::vector<NodeId> leaves;       // same order as PrototypeTree::leaves()
    Tensor weights;                   // product of group weights along each path
    Tensor root_weights;              // root group softmax
    std::vector<Tensor> child_groups; // one softmax per internal node
};

PathWeights path_weights(Tape& tape, const Tensor& z, const PrototypeTree& tree);

// Sum over leaves of path weight times the aligned leaf pattern.
Tensor hierarchical_predict(Tape& tape, const Tensor& z, const PrototypeTree& tree, std::size_t phase0,
                            std::size_t horizon);
Tensor hierarchical_predict(Tape& tape, const PathWeights& weights, const PrototypeTree& tree,
                            std::size_t phase0, std::size_t horizon);

struct SplitSelection {
    std::vector<NodeId> selected;  // ascending id
    std::map<NodeId, double> loss;
    std::map<NodeId, std::size_t> count;
    std::map<NodeId, double> norm_loss;
};

/// Loss attribution over the top-k most similar leaves per instance,
/// normalized by attribution count; returns leaves in the top alpha
/// percent. scores[i][l] is the similarity of instance i to leaves[l].
/// Similarity ties go to the lower id; NormLoss ties at the cutoff are all
/// selected.
SplitSelection select_leaves(std::span<const NodeId> leaves, const std::vector<std::vector<double>>& scores,
                             std::span<const double> instance_losses, std::size_t k, double alpha);

}  // namespace protots

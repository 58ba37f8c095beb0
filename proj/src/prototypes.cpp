#include "protots/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protots/errors.hpp"

namespace protots {

namespace {

Tensor random_vector(std::size_t n, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (auto& x : v) x = stddev > 0.0 ? dist(rng) : 0.0;
    return Tensor::vector(std::move(v), true);
}

}  // namespace

PrototypeTree::PrototypeTree(std::size_t n_roots, std::size_t dim, std::size_t period, double mu_stddev,
                             double pattern_stddev, std::mt19937_64& rng)
    : dim_(dim), period_(period) {
    if (n_roots < 1) throw ConfigError("prototype tree needs at least one root");
    if (dim < 1 || period < 1) throw ConfigError("prototype tree needs positive embedding size and period");
    for (std::size_t i = 0; i < n_roots; ++i) {
        PrototypeNode node;
        node.id = next_id_++;
        node.mu = random_vector(dim, mu_stddev, rng);
        node.pattern = random_vector(period, pattern_stddev, rng);
        roots_.push_back(node.id);
        nodes_.emplace(node.id, std::move(node));
    }
}

PrototypeTree PrototypeTree::from_nodes(std::vector<PrototypeNode> nodes, std::vector<NodeId> roots,
                                        NodeId next_id, std::size_t dim, std::size_t period) {
    PrototypeTree tree;
    tree.dim_ = dim;
    tree.period_ = period;
    tree.roots_ = std::move(roots);
    tree.next_id_ = next_id;
    for (auto& n : nodes) {
        const auto id = n.id;
        if (!tree.nodes_.emplace(id, std::move(n)).second) {
            throw ContractError("prototype tree: duplicate node id " + std::to_string(id));
        }
    }
    tree.validate();
    return tree;
}

const PrototypeNode& PrototypeTree::node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw ContractError("prototype " + std::to_string(id) + " not found");
    return it->second;
}

PrototypeNode& PrototypeTree::node(NodeId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw ContractError("prototype " + std::to_string(id) + " not found");
    return it->second;
}

std::vector<NodeId> PrototypeTree::leaves() const {
    std::vector<NodeId> out;
    std::vector<NodeId> stack(roots_.rbegin(), roots_.rend());
    while (!stack.empty()) {
        const auto id = stack.back();
        stack.pop_back();
        const auto& n = node(id);
        if (n.is_leaf()) {
            out.push_back(id);
        } else {
            stack.insert(stack.end(), n.children.rbegin(), n.children.rend());
        }
    }
    return out;
}

std::vector<NodeId> PrototypeTree::node_ids() const {
    std::vector<NodeId> out;
    out.reserve(nodes_.size());
    for (const auto& [id, n] : nodes_) out.push_back(id);
    return out;
}

std::size_t PrototypeTree::depth() const {
    std::size_t d = 0;
    for (const auto& [id, n] : nodes_) d = std::max(d, n.level);
    return d;
}

std::vector<NodeId> PrototypeTree::split(NodeId id, std::size_t m, std::uint64_t seed, double jitter) {
    auto& parent = node(id);
    if (!parent.is_leaf()) throw ContractError("split: prototype " + std::to_string(id) + " is not a leaf");
    if (m < 2) throw ContractError("split: need at least 2 children, got " + std::to_string(m));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, jitter > 0.0 ? jitter : 1.0);
    std::vector<NodeId> children;
    for (std::size_t j = 0; j < m; ++j) {
        PrototypeNode child;
        child.id = next_id_++;
        child.parent = id;
        child.level = parent.level + 1;
        std::vector<double> mu(parent.mu.data().begin(), parent.mu.data().end());
        for (auto& v : mu) v += jitter > 0.0 ? noise(rng) : 0.0;
        child.mu = Tensor::vector(std::move(mu), true);
        child.pattern = parent.pattern.clone();
        child.pattern.set_requires_grad(true);
        child.pattern.clear_grad();
        children.push_back(child.id);
        nodes_.emplace(child.id, std::move(child));
    }
    // `parent` stays valid: std::map does not invalidate references on insert.
    parent.children = children;
    return children;
}

void PrototypeTree::edit_pattern(NodeId id, std::span<const double> pattern, bool lock) {
    auto& n = node(id);
    if (pattern.size() != period_) {
        throw ContractError("edit_pattern: pattern has " + std::to_string(pattern.size()) + " values, expected " +
                            std::to_string(period_));
    }
    for (double v : pattern) {
        if (!std::isfinite(v)) throw ContractError("edit_pattern: non-finite value");
    }
    auto dst = n.pattern.mutable_data();
    std::copy(pattern.begin(), pattern.end(), dst.begin());
    n.pattern_locked = lock;
}

void PrototypeTree::set_label(NodeId id, std::string label) { node(id).label = std::move(label); }

ParameterList PrototypeTree::parameters() const {
    ParameterList out;
    for (const auto& [id, n] : nodes_) {
        out.push_back({"proto" + std::to_string(id) + ".mu", n.mu, true});
        out.push_back({"proto" + std::to_string(id) + ".pattern", n.pattern, n.is_leaf() && !n.pattern_locked});
    }
    return out;
}

PrototypeTree PrototypeTree::clone() const {
    PrototypeTree c = *this;
    for (auto& [id, n] : c.nodes_) {
        n.mu = n.mu.clone();
        n.pattern = n.pattern.clone();
    }
    return c;
}

void PrototypeTree::validate() const {
    if (roots_.empty()) throw ContractError("prototype tree has no roots");
    std::map<NodeId, std::size_t> seen;
    std::vector<std::pair<NodeId, std::size_t>> stack;
    for (auto r : roots_) {
        if (node(r).parent) throw ContractError("root " + std::to_string(r) + " has a parent");
        stack.emplace_back(r, 1);
    }
    while (!stack.empty()) {
        auto [id, level] = stack.back();
        stack.pop_back();
        if (++seen[id] > 1) throw ContractError("prototype " + std::to_string(id) + " reachable twice");
        const auto& n = node(id);
        if (n.level != level) throw ContractError("prototype " + std::to_string(id) + " has inconsistent level");
        if (n.mu.size() != dim_) throw ContractError("prototype " + std::to_string(id) + " embedding size mismatch");
        if (n.pattern.size() != period_) throw ContractError("prototype " + std::to_string(id) + " pattern length mismatch");
        if (n.children.size() == 1) throw ContractError("prototype " + std::to_string(id) + " has a single child");
        for (auto c : n.children) {
            if (node(c).parent != id) throw ContractError("prototype " + std::to_string(c) + " has wrong parent");
            stack.emplace_back(c, level + 1);
        }
    }
    if (seen.size() != nodes_.size()) throw ContractError("prototype tree has unreachable nodes");
    for (const auto& [id, n] : nodes_) {
        if (id >= next_id_) throw ContractError("prototype id " + std::to_string(id) + " beyond id counter");
    }
}

// ------------------------------------------------------------ prediction

namespace {

Tensor group_similarity(Tape& tape, const Tensor& z, const PrototypeTree& tree, const std::vector<NodeId>& group) {
    std::vector<Tensor> mus;
    mus.reserve(group.size());
    for (auto id : group) mus.push_back(tree.node(id).mu);
    return tape.softmax_neg(tape.sq_distances(z, tape.stack_rows(mus)));
}

}  // namespace

Tensor root_similarity(Tape& tape, const Tensor& z, const PrototypeTree& tree) {
    return group_similarity(tape, z, tree, tree.roots());
}

Tensor child_similarity(Tape& tape, const Tensor& z, const PrototypeTree& tree, NodeId parent) {
    const auto& n = tree.node(parent);
    if (n.is_leaf()) throw ContractError("child_similarity: prototype " + std::to_string(parent) + " is a leaf");
    return group_similarity(tape, z, tree, n.children);
}

Tensor align_pattern(Tape& tape, const Tensor& pattern, std::size_t phase0, std::size_t horizon) {
    if (phase0 >= pattern.size()) {
        throw ContractError("align_pattern: phase " + std::to_string(phase0) + " outside period " +
                            std::to_string(pattern.size()));
    }
    return tape.cyclic_slice(pattern, phase0, horizon);
}

Tensor root_predict(Tape& tape, const Tensor& z, const PrototypeTree& tree, std::size_t phase0,
                    std::size_t horizon) {
    auto f = root_similarity(tape, z, tree);
    std::vector<Tensor> aligned;
    for (auto id : tree.roots()) aligned.push_back(align_pattern(tape, tree.node(id).pattern, phase0, horizon));
    auto out = tape.matmul(tape.reshape(f, {1, f.size()}), tape.stack_rows(aligned));
    return tape.reshape(out, {horizon});
}

PathWeights path_weights(Tape& tape, const Tensor& z, const PrototypeTree& tree) {
    PathWeights out;
    out.root_weights = root_similarity(tape, z, tree);
    std::vector<Tensor> leaf_weights;

    // Depth-first, matching PrototypeTree::leaves().
    auto visit = [&](auto&& self, NodeId id, const Tensor& weight) -> void {
        const auto& n = tree.node(id);
        if (n.is_leaf()) {
            out.leaves.push_back(id);
            leaf_weights.push_back(weight);
            return;
        }
        auto g = child_similarity(tape, z, tree, id);
        out.child_groups.push_back(g);
        for (std::size_t j = 0; j < n.children.size(); ++j) {
            self(self, n.children[j], tape.mul(weight, tape.select(g, j)));
        }
    };
    for (std::size_t i = 0; i < tree.roots().size(); ++i) {
        visit(visit, tree.roots()[i], tape.select(out.root_weights, i));
    }
    out.weights = tape.concat(leaf_weights);
    return out;
}

Tensor hierarchical_predict(Tape& tape, const PathWeights& weights, const PrototypeTree& tree,
                            std::size_t phase0, std::size_t horizon) {
    std::vector<Tensor> aligned;
    aligned.reserve(weights.leaves.size());
    for (auto id : weights.leaves) aligned.push_back(align_pattern(tape, tree.node(id).pattern, phase0, horizon));
    auto w = tape.reshape(weights.weights, {1, weights.weights.size()});
    return tape.reshape(tape.matmul(w, tape.stack_rows(aligned)), {horizon});
}

Tensor hierarchical_predict(Tape& tape, const Tensor& z, const PrototypeTree& tree, std::size_t phase0,
                            std::size_t horizon) {
    return hierarchical_predict(tape, path_weights(tape, z, tree), tree, phase0, horizon);
}

// -------------------------------------------------------- splitting rule

SplitSelection select_leaves(std::span<const NodeId> leaves, const std::vector<std::vector<double>>& scores,
                             std::span<const double> instance_losses, std::size_t k, double alpha) {
    const std::size_t n = leaves.size();
    if (n == 0) throw ContractError("splitting rule: model has no leaves");
    if (k < 1) throw ContractError("splitting rule: k must be >= 1");
    if (!(alpha > 0.0 && alpha <= 100.0)) throw ContractError("splitting rule: alpha must be in (0, 100]");
    if (scores.size() != instance_losses.size()) {
        throw DimensionError("splitting rule: " + std::to_string(scores.size()) + " score rows for " +
                             std::to_string(instance_losses.size()) + " losses");
    }

    std::vector<double> loss(n, 0.0);
    std::vector<std::size_t> count(n, 0);
    std::vector<std::size_t> order(n);
    const std::size_t top = std::min(k, n);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        if (s.size() != n) throw DimensionError("splitting rule: score row has wrong length");
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (s[a] != s[b]) return s[a] > s[b];
                              return leaves[a] < leaves[b];
                          });
        for (std::size_t r = 0; r < top; ++r) {
            loss[order[r]] += instance_losses[i];
            count[order[r]] += 1;
        }
    }

    SplitSelection out;
    std::vector<double> norm(n, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
        norm[l] = count[l] > 0 ? loss[l] / static_cast<double>(count[l]) : 0.0;
        out.loss[leaves[l]] = loss[l];
        out.count[leaves[l]] = count[l];
        out.norm_loss[leaves[l]] = norm[l];
    }
    auto take = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) / 100.0 - 1e-9));
    take = std::clamp<std::size_t>(take, 1, n);
    std::vector<double> sorted = norm;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double cutoff = sorted[take - 1];
    for (std::size_t l = 0; l < n; ++l) {
        if (norm[l] >= cutoff) out.selected.push_back(leaves[l]);
    }
    std::sort(out.selected.begin(), out.selected.end());
    return out;
}

}  // namespace protots

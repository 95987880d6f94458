#include "scbr/containment_index.hpp"

#include <algorithm>
#include <limits>
#include <fmt/format.h>

namespace scbr {

namespace {

// Per-thread visit marks, reset in O(1) by bumping the epoch.
struct Scratch {
    std::vector<std::uint32_t> seen;
    std::vector<std::uint8_t> state;
    std::uint32_t epoch = 0;

    void begin(std::size_t n) {
        if (seen.size() < n) {
            seen.resize(n, 0);
            state.resize(n, 0);
        }
        if (++epoch == 0) {
            std::fill(seen.begin(), seen.end(), 0);
            epoch = 1;
        }
    }

    bool visited(NodeId n) const noexcept { return seen[n] == epoch; }

    std::uint8_t &at(NodeId n) noexcept {
        if (seen[n] != epoch) {
            seen[n] = epoch;
            state[n] = 0;
        }
        return state[n];
    }
};

thread_local Scratch t_scratch;

constexpr std::uint32_t kNumericPred = 0xffffffffu;
constexpr std::uint32_t kUnknownText = 0xfffffffeu;

// The header being matched, indexed by attribute id.
struct HeaderView {
    struct Slot {
        std::uint32_t epoch = 0;
        std::uint32_t text = kNumericPred;
        double num = 0;
    };
    std::vector<Slot> slots;
    std::uint32_t epoch = 0;
    std::vector<NodeId> stack;
    std::vector<const ClientRef *> hits;

    void begin(std::size_t n) {
        if (slots.size() < n) slots.resize(n);
        if (++epoch == 0) {
            for (auto &s : slots) s.epoch = 0;
            epoch = 1;
        }
    }
};

thread_local HeaderView t_view;

constexpr std::uint8_t kEvaluated = 1;
constexpr std::uint8_t kHolds = 2;
constexpr std::uint8_t kExpanded = 4;

const Constraint *first_text(const Subscription &s) noexcept {
    for (const auto &c : s.constraints) {
        if (c.is_text()) return &c;
    }
    return nullptr;
}

void erase_value(std::vector<NodeId> &v, NodeId n) {
    auto it = std::find(v.begin(), v.end(), n);
    if (it != v.end()) v.erase(it);
}

} // namespace

const ContainmentIndex::Node &ContainmentIndex::node(NodeId n) const {
    if (n >= nodes_.size() || !nodes_[n].alive) {
        throw IndexError(fmt::format("unknown node {}", n));
    }
    return nodes_[n];
}

NodeId ContainmentIndex::allocate() {
    if (!free_.empty()) {
        const NodeId n = free_.back();
        free_.pop_back();
        return n;
    }
    nodes_.emplace_back();
    return static_cast<NodeId>(nodes_.size() - 1);
}

const std::vector<NodeId> *ContainmentIndex::keyed_roots(const std::string &attr,
                                                         const std::string &value) const {
    auto a = keyed_roots_.find(attr);
    if (a == keyed_roots_.end()) return nullptr;
    auto v = a->second.find(value);
    if (v == a->second.end()) return nullptr;
    return &v->second;
}

void ContainmentIndex::add_root(NodeId n) {
    const auto *key = first_text(nodes_[n].sub);
    if (key) {
        keyed_roots_[key->attribute()][key->text()->value].push_back(n);
    } else {
        unkeyed_roots_.push_back(n);
    }
    ++root_count_;
}

void ContainmentIndex::drop_root(NodeId n) {
    const auto *key = first_text(nodes_[n].sub);
    if (key) {
        auto a = keyed_roots_.find(key->attribute());
        auto v = a->second.find(key->text()->value);
        erase_value(v->second, n);
        if (v->second.empty()) a->second.erase(v);
        if (a->second.empty()) keyed_roots_.erase(a);
    } else {
        erase_value(unkeyed_roots_, n);
    }
    --root_count_;
}

void ContainmentIndex::link(NodeId parent, NodeId child) {
    nodes_[parent].children.push_back(child);
    nodes_[child].parents.push_back(parent);
    ++edge_count_;
}

void ContainmentIndex::unlink(NodeId parent, NodeId child) {
    erase_value(nodes_[parent].children, child);
    erase_value(nodes_[child].parents, parent);
    --edge_count_;
}

std::vector<NodeId> ContainmentIndex::find_parents(const Subscription &s) const {
    auto &scratch = t_scratch;
    scratch.begin(nodes_.size());
    auto covering = [&](NodeId n) {
        auto &st = scratch.at(n);
        if (!(st & kEvaluated)) {
            st |= kEvaluated;
            if (covers(nodes_[n].sub, s)) st |= kHolds;
        }
        return (st & kHolds) != 0;
    };

    std::vector<NodeId> stack;
    auto seed = [&](const std::vector<NodeId> &roots) {
        for (NodeId r : roots) {
            if (covering(r)) stack.push_back(r);
        }
    };
    seed(unkeyed_roots_);
    for (const auto &c : s.constraints) {
        if (!c.is_text()) continue;
        if (const auto *roots = keyed_roots(c.attribute(), c.text()->value)) seed(*roots);
    }

    std::vector<NodeId> result;
    while (!stack.empty()) {
        const NodeId n = stack.back();
        stack.pop_back();
        auto &st = scratch.at(n);
        if (st & kExpanded) continue;
        st |= kExpanded;
        bool deeper = false;
        for (NodeId c : nodes_[n].children) {
            if (covering(c)) {
                deeper = true;
                if (!(scratch.at(c) & kExpanded)) stack.push_back(c);
            }
        }
        if (!deeper) result.push_back(n);
    }
    std::sort(result.begin(), result.end());
    return result;
}

std::vector<NodeId> ContainmentIndex::find_children(const Subscription &s) const {
    auto &scratch = t_scratch;
    scratch.begin(nodes_.size());
    auto covered = [&](NodeId n) {
        auto &st = scratch.at(n);
        if (!(st & kEvaluated)) {
            st |= kEvaluated;
            if (covers(s, nodes_[n].sub)) st |= kHolds;
        }
        return (st & kHolds) != 0;
    };
    auto maximal = [&](NodeId n) {
        return std::none_of(nodes_[n].parents.begin(), nodes_[n].parents.end(), covered);
    };

    std::vector<NodeId> result;

    // Anything s covers carries all of s's text equalities.
    const std::vector<NodeId> *smallest = nullptr;
    bool keyed = false;
    for (const auto &c : s.constraints) {
        if (!c.is_text()) continue;
        keyed = true;
        const std::vector<NodeId> *bucket = nullptr;
        if (auto a = eq_members_.find(c.attribute()); a != eq_members_.end()) {
            if (auto v = a->second.find(c.text()->value); v != a->second.end()) bucket = &v->second;
        }
        if (bucket == nullptr) return result;
        if (smallest == nullptr || bucket->size() < smallest->size()) smallest = bucket;
    }
    if (keyed) {
        for (NodeId n : *smallest) {
            if (covered(n) && maximal(n)) result.push_back(n);
        }
        std::sort(result.begin(), result.end());
        return result;
    }

    // Descend from every root through nodes that overlap s; every ancestor of a
    // maximal covered node overlaps s and is itself not covered.
    std::vector<NodeId> stack(unkeyed_roots_.begin(), unkeyed_roots_.end());
    for (const auto &[attr, values] : keyed_roots_) {
        for (const auto &[value, roots] : values) stack.insert(stack.end(), roots.begin(), roots.end());
    }
    while (!stack.empty()) {
        const NodeId n = stack.back();
        stack.pop_back();
        auto &st = scratch.at(n);
        if (st & kExpanded) continue;
        st |= kExpanded;
        if (covered(n)) {
            if (maximal(n)) result.push_back(n);
        } else if (may_overlap(s, nodes_[n].sub)) {
            for (NodeId c : nodes_[n].children) {
                if (!(scratch.at(c) & kExpanded)) stack.push_back(c);
            }
        }
    }
    std::sort(result.begin(), result.end());
    return result;
}

NodeId ContainmentIndex::insert(const Subscription &s, std::string client_id, std::string sub_id,
                                std::string reply) {
    if (!is_canonical(s)) throw IndexError("subscription is not canonical");
    if (by_sub_id_.count(sub_id)) {
        throw IndexError(fmt::format("subscription id '{}' already registered", sub_id));
    }
    auto text = serialize(s);
    if (auto it = by_text_.find(text); it != by_text_.end()) {
        nodes_[it->second].clients.push_back({std::move(client_id), sub_id, std::move(reply)});
        by_sub_id_.emplace(std::move(sub_id), it->second);
        return it->second;
    }

    const auto parents = find_parents(s);
    const auto children = find_children(s);

    const NodeId n = allocate();
    auto &fresh = nodes_[n];
    fresh.sub.constraints = s.constraints;
    fresh.text = text;
    fresh.alive = true;
    fresh.clients.push_back({std::move(client_id), sub_id, std::move(reply)});
    compile(n);

    std::vector<bool> child_was_root;
    for (NodeId c : children) child_was_root.push_back(nodes_[c].parents.empty());

    for (NodeId p : parents) {
        for (NodeId c : children) {
            const auto &kids = nodes_[p].children;
            if (std::find(kids.begin(), kids.end(), c) != kids.end()) unlink(p, c);
        }
        link(p, n);
    }
    for (std::size_t i = 0; i < children.size(); ++i) {
        link(n, children[i]);
        if (child_was_root[i]) drop_root(children[i]);
    }
    if (parents.empty()) add_root(n);

    for (const auto &c : s.constraints) {
        if (c.is_text()) eq_members_[c.attribute()][c.text()->value].push_back(n);
    }
    text_bytes_ += text.size();
    by_text_.emplace(std::move(text), n);
    by_sub_id_.emplace(std::move(sub_id), n);
    return n;
}

bool ContainmentIndex::remove(std::string_view sub_id) {
    auto it = by_sub_id_.find(std::string(sub_id));
    if (it == by_sub_id_.end()) return false;
    const NodeId n = it->second;
    by_sub_id_.erase(it);

    auto &clients = nodes_[n].clients;
    clients.erase(std::find_if(clients.begin(), clients.end(),
                               [&](const ClientRef &r) { return r.sub_id == sub_id; }));
    if (!clients.empty()) return true;

    const auto parents = nodes_[n].parents;
    const auto children = nodes_[n].children;
    if (parents.empty()) drop_root(n);
    for (NodeId p : parents) unlink(p, n);
    for (NodeId c : children) unlink(n, c);

    // Parents of a Hasse node form an antichain, so only the child's surviving
    // parents can already provide a path p -> ... -> c.
    for (NodeId c : children) {
        const auto survivors = nodes_[c].parents;
        for (NodeId p : parents) {
            const bool implied = std::any_of(survivors.begin(), survivors.end(), [&](NodeId q) {
                return covers(nodes_[p].sub, nodes_[q].sub);
            });
            if (!implied) link(p, c);
        }
        if (nodes_[c].parents.empty()) add_root(c);
    }

    for (const auto &c : nodes_[n].sub.constraints) {
        if (!c.is_text()) continue;
        auto a = eq_members_.find(c.attribute());
        auto v = a->second.find(c.text()->value);
        erase_value(v->second, n);
        if (v->second.empty()) a->second.erase(v);
        if (a->second.empty()) eq_members_.erase(a);
    }
    text_bytes_ -= nodes_[n].text.size();
    by_text_.erase(nodes_[n].text);
    dead_preds_ += nodes_[n].pred_len;
    nodes_[n] = Node{};
    free_.push_back(n);

    if (dead_preds_ > 4096 && dead_preds_ > preds_.size() / 2) {
        std::vector<Pred> live;
        live.reserve(preds_.size() - dead_preds_);
        for (auto &nd : nodes_) {
            if (!nd.alive) continue;
            const auto off = static_cast<std::uint32_t>(live.size());
            live.insert(live.end(), preds_.begin() + nd.pred_off, preds_.begin() + nd.pred_off + nd.pred_len);
            nd.pred_off = off;
        }
        preds_ = std::move(live);
        dead_preds_ = 0;
    }
    return true;
}

std::uint32_t ContainmentIndex::intern(std::unordered_map<std::string, std::uint32_t> &ids, const std::string &key) {
    return ids.try_emplace(key, static_cast<std::uint32_t>(ids.size())).first->second;
}

void ContainmentIndex::compile(NodeId n) {
    auto &nd = nodes_[n];
    nd.pred_off = static_cast<std::uint32_t>(preds_.size());
    nd.pred_len = static_cast<std::uint32_t>(nd.sub.constraints.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (const auto &c : nd.sub.constraints) {
        Pred p{intern(attr_ids_, c.attribute()), kNumericPred, -inf, inf, true, true};
        if (const auto *r = c.range()) {
            if (r->lo) {
                p.lo = r->lo->value;
                p.lo_inclusive = r->lo->inclusive;
            }
            if (r->hi) {
                p.hi = r->hi->value;
                p.hi_inclusive = r->hi->inclusive;
            }
        } else {
            p.text = intern(text_ids_, c.text()->value);
        }
        preds_.push_back(p);
    }
}

bool ContainmentIndex::holds(const Node &nd) const noexcept {
    const auto &view = t_view;
    const Pred *p = preds_.data() + nd.pred_off;
    for (std::uint32_t i = 0; i < nd.pred_len; ++i, ++p) {
        const auto &slot = view.slots[p->attr];
        if (slot.epoch != view.epoch) return false;
        if (p->text != kNumericPred) {
            if (slot.text != p->text) return false;
            continue;
        }
        if (slot.text != kNumericPred) return false;
        const double x = slot.num;
        if (p->lo_inclusive ? x < p->lo : x <= p->lo) return false;
        if (p->hi_inclusive ? x > p->hi : x >= p->hi) return false;
    }
    return true;
}

std::vector<ClientRef> ContainmentIndex::match(const PublicationHeader &h) const {
    std::vector<ClientRef> out;
    if (by_text_.empty()) return out;

    auto &view = t_view;
    view.begin(attr_ids_.size());
    auto &stack = view.stack;
    stack.assign(unkeyed_roots_.begin(), unkeyed_roots_.end());
    for (const auto &[attr, value] : h.entries()) {
        const auto a = attr_ids_.find(attr);
        if (a == attr_ids_.end()) continue;
        auto &slot = view.slots[a->second];
        slot.epoch = view.epoch;
        if (value.is_text()) {
            const auto t = text_ids_.find(value.as_text());
            slot.text = t == text_ids_.end() ? kUnknownText : t->second;
            if (const auto *roots = keyed_roots(attr, value.as_text())) {
                for (NodeId r : *roots) __builtin_prefetch(&nodes_[r]);
                stack.insert(stack.end(), roots->begin(), roots->end());
            }
        } else {
            slot.text = kNumericPred;
            slot.num = value.as_number();
        }
    }

    auto &scratch = t_scratch;
    scratch.begin(nodes_.size());
    auto &hits = view.hits;
    hits.clear();
    while (!stack.empty()) {
        const NodeId n = stack.back();
        stack.pop_back();
        if (scratch.visited(n)) continue;
        scratch.at(n) = kEvaluated;
        const auto &nd = nodes_[n];
        if (!stack.empty()) __builtin_prefetch(preds_.data() + nodes_[stack.back()].pred_off);
        __builtin_prefetch(nd.children.data());
        __builtin_prefetch(nd.clients.data());
        if (!holds(nd)) continue;
        for (const auto &c : nd.clients) hits.push_back(&c);
        for (NodeId c : nd.children) {
            if (scratch.visited(c)) continue;
            __builtin_prefetch(&nodes_[c]);
            stack.push_back(c);
        }
    }
    out.reserve(hits.size());
    for (const auto *c : hits) out.push_back(*c);
    return out;
}

IndexStats ContainmentIndex::stats() const {
    IndexStats st;
    st.node_count = by_text_.size();
    st.root_count = root_count_;
    if (st.node_count == 0) return st;

    // Longest downward chain, processed in reverse topological order.
    std::vector<std::size_t> pending(nodes_.size(), 0);
    std::vector<NodeId> order;
    order.reserve(st.node_count);
    for (NodeId n = 0; n < nodes_.size(); ++n) {
        if (!nodes_[n].alive) continue;
        pending[n] = nodes_[n].parents.size();
        if (pending[n] == 0) order.push_back(n);
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (NodeId c : nodes_[order[i]].children) {
            if (--pending[c] == 0) order.push_back(c);
        }
    }
    std::vector<std::size_t> depth(nodes_.size(), 0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        std::size_t d = 0;
        for (NodeId c : nodes_[*it].children) d = std::max(d, depth[c]);
        depth[*it] = d + 1;
        st.max_depth = std::max(st.max_depth, depth[*it]);
    }

    st.footprint_bytes = footprint_bytes();
    return st;
}

std::size_t ContainmentIndex::footprint_bytes() const noexcept {
    return text_bytes_ + kNodeBytes * by_text_.size() + kEdgeBytes * edge_count_ + kClientBytes * by_sub_id_.size();
}

std::vector<NodeId> ContainmentIndex::nodes() const {
    std::vector<NodeId> out;
    for (NodeId n = 0; n < nodes_.size(); ++n) {
        if (nodes_[n].alive) out.push_back(n);
    }
    return out;
}

std::vector<NodeId> ContainmentIndex::roots() const {
    std::vector<NodeId> out(unkeyed_roots_.begin(), unkeyed_roots_.end());
    for (const auto &[attr, values] : keyed_roots_) {
        for (const auto &[value, roots] : values) out.insert(out.end(), roots.begin(), roots.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

const Subscription &ContainmentIndex::subscription(NodeId n) const { return node(n).sub; }

const std::string &ContainmentIndex::canonical_text(NodeId n) const { return node(n).text; }

const std::vector<NodeId> &ContainmentIndex::parents(NodeId n) const { return node(n).parents; }

const std::vector<NodeId> &ContainmentIndex::children(NodeId n) const { return node(n).children; }

const std::vector<ClientRef> &ContainmentIndex::clients(NodeId n) const { return node(n).clients; }

std::vector<ClientRef> ContainmentIndex::all_clients() const {
    std::vector<ClientRef> out;
    for (const auto &nd : nodes_) {
        if (nd.alive) out.insert(out.end(), nd.clients.begin(), nd.clients.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> ContainmentIndex::audit() const {
    std::vector<std::string> issues;
    const auto live = nodes();
    auto text = [&](NodeId n) { return nodes_[n].text; };

    std::size_t edges = 0;
    for (NodeId p : live) {
        const auto &nd = nodes_[p];
        if (nd.clients.empty()) issues.push_back(fmt::format("node {} has no clients", p));
        if (serialize(nd.sub) != nd.text) issues.push_back(fmt::format("node {} text drifted", p));
        for (NodeId c : nd.children) {
            ++edges;
            if (c >= nodes_.size() || !nodes_[c].alive) {
                issues.push_back(fmt::format("edge {} -> dead node {}", p, c));
                continue;
            }
            const auto &back = nodes_[c].parents;
            if (std::find(back.begin(), back.end(), p) == back.end()) {
                issues.push_back(fmt::format("edge {} -> {} missing back-reference", p, c));
            }
            if (p == c || !covers(nd.sub, nodes_[c].sub)) {
                issues.push_back(fmt::format("edge {} -> {} does not cover", text(p), text(c)));
            }
            for (NodeId m : live) {
                if (m == p || m == c) continue;
                if (covers(nd.sub, nodes_[m].sub) && covers(nodes_[m].sub, nodes_[c].sub)) {
                    issues.push_back(fmt::format("edge {} -> {} is transitive via {}", text(p), text(c),
                                                 text(m)));
                    break;
                }
            }
        }
    }
    if (edges != edge_count_) issues.push_back("edge count out of sync");

    // every covering pair must be connected by a path
    for (NodeId a : live) {
        std::vector<bool> reach(nodes_.size(), false);
        std::vector<NodeId> stack{a};
        while (!stack.empty()) {
            const NodeId n = stack.back();
            stack.pop_back();
            for (NodeId c : nodes_[n].children) {
                if (c < reach.size() && !reach[c]) {
                    reach[c] = true;
                    stack.push_back(c);
                }
            }
        }
        for (NodeId b : live) {
            if (a != b && covers(nodes_[a].sub, nodes_[b].sub) && !reach[b]) {
                issues.push_back(fmt::format("no path {} -> {}", text(a), text(b)));
            }
        }
    }

    std::vector<NodeId> expected_roots;
    for (NodeId n : live) {
        if (nodes_[n].parents.empty()) expected_roots.push_back(n);
    }
    if (expected_roots != roots() || expected_roots.size() != root_count_) {
        issues.push_back("root set out of sync");
    }
    if (by_text_.size() != live.size()) issues.push_back("text map out of sync");
    return issues;
}

void ContainmentIndex::corrupt_remove_edge(NodeId parent, NodeId child) {
    unlink(parent, child);
}

} // namespace scbr

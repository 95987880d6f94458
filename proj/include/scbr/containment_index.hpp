#pragma once

#include "scbr/model.hpp"

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scbr {

class IndexError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using NodeId = std::uint32_t;

struct ClientRef {
    std::string client_id;
    std::string sub_id;
    /// Opaque to the index; the router keeps the reply address here.
    std::string reply;

    friend auto operator<=>(const ClientRef &, const ClientRef &) = default;
    friend bool operator==(const ClientRef &, const ClientRef &) = default;
};

struct IndexStats {
    std::size_t node_count = 0;
    std::size_t root_count = 0;
    std::size_t max_depth = 0;
    std::size_t footprint_bytes = 0;

    friend bool operator==(const IndexStats &, const IndexStats &) = default;
};

/// Accounting constants for IndexStats::footprint_bytes.
inline constexpr std::size_t kNodeBytes = 64;
inline constexpr std::size_t kEdgeBytes = 16;
inline constexpr std::size_t kClientBytes = 24;

/// Subscriptions ordered by covering, stored as the Hasse diagram of that order.
///
/// Each distinct canonical subscription is one node; equal subscriptions from
/// several clients share the node. A node's parents are its immediate covers.
/// Matching walks down from the roots and never descends below a node that
/// fails, since every descendant is covered by it.
///
/// Roots are additionally bucketed by their first text-equality constraint so
/// that a header only visits roots whose equality key it carries. This changes
/// which roots are looked at, not the traversal semantics.
///
/// Not internally synchronized: insert/remove need exclusive access, match and
/// the const accessors may run concurrently with each other.
class ContainmentIndex {
public:
    ContainmentIndex() = default;

    /// Throws IndexError if `sub_id` is already registered or `s` is not canonical.
    NodeId insert(const Subscription &s, std::string client_id, std::string sub_id, std::string reply = {});

    /// Returns false if `sub_id` is unknown.
    bool remove(std::string_view sub_id);

    /// Client entries of every stored subscription matching `h`, in no
    /// particular order.
    std::vector<ClientRef> match(const PublicationHeader &h) const;

    IndexStats stats() const;
    /// Same value as stats().footprint_bytes, in constant time.
    std::size_t footprint_bytes() const noexcept;

    std::size_t node_count() const noexcept { return by_text_.size(); }
    std::size_t client_count() const noexcept { return by_sub_id_.size(); }
    bool empty() const noexcept { return by_text_.empty(); }

    // Introspection, used by tests and the verification tooling.
    std::vector<NodeId> nodes() const;
    std::vector<NodeId> roots() const;
    const Subscription &subscription(NodeId n) const;
    const std::string &canonical_text(NodeId n) const;
    const std::vector<NodeId> &parents(NodeId n) const;
    const std::vector<NodeId> &children(NodeId n) const;
    const std::vector<ClientRef> &clients(NodeId n) const;
    std::vector<ClientRef> all_clients() const;

    /// Exhaustive structural check (cubic in node count). Returns one line per
    /// violation; empty when the index is a correct Hasse diagram.
    std::vector<std::string> audit() const;

    /// Drops an edge without repairing anything. Only for negative-control tests.
    void corrupt_remove_edge(NodeId parent, NodeId child);

private:
    // A constraint compiled against interned attribute and text ids; missing
    // bounds are infinite. text == kNumericPred marks a range.
    struct Pred {
        std::uint32_t attr;
        std::uint32_t text;
        double lo;
        double hi;
        bool lo_inclusive;
        bool hi_inclusive;
    };

    // What match() reads sits in the first cache line.
    struct alignas(64) Node {
        std::uint32_t pred_off = 0;
        std::uint32_t pred_len = 0;
        std::vector<NodeId> children;
        std::vector<ClientRef> clients;
        bool alive = false;
        Subscription sub;
        std::string text;
        std::vector<NodeId> parents;
    };

    using Bucket = std::unordered_map<std::string, std::vector<NodeId>>;

    const Node &node(NodeId n) const;
    NodeId allocate();

    std::vector<NodeId> find_parents(const Subscription &s) const;
    std::vector<NodeId> find_children(const Subscription &s) const;

    void link(NodeId parent, NodeId child);
    void unlink(NodeId parent, NodeId child);

    void add_root(NodeId n);
    void drop_root(NodeId n);
    const std::vector<NodeId> *keyed_roots(const std::string &attr, const std::string &value) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> free_;
    std::unordered_map<std::string, NodeId> by_text_;
    std::unordered_map<std::string, NodeId> by_sub_id_;

    // roots keyed by (attribute, value) of their first text equality
    std::unordered_map<std::string, Bucket> keyed_roots_;
    std::vector<NodeId> unkeyed_roots_;
    std::size_t root_count_ = 0;
    // every node carrying a given text equality
    std::unordered_map<std::string, Bucket> eq_members_;
    std::size_t edge_count_ = 0;
    std::size_t text_bytes_ = 0;

    void compile(NodeId n);
    std::uint32_t intern(std::unordered_map<std::string, std::uint32_t> &ids, const std::string &key);
    bool holds(const Node &nd) const noexcept;

    std::vector<Pred> preds_;
    std::size_t dead_preds_ = 0;
    std::unordered_map<std::string, std::uint32_t> attr_ids_;
    std::unordered_map<std::string, std::uint32_t> text_ids_;
};

} // namespace scbr

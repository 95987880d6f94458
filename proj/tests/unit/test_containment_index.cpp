#include <doctest.h>

#include "scbr/containment_index.hpp"
#include "support/generators.hpp"

#include <algorithm>
#include <map>
#include <random>

using namespace scbr;

namespace {

std::vector<ClientRef> sorted(std::vector<ClientRef> v) {
    std::sort(v.begin(), v.end());
    return v;
}

Subscription sub(std::string_view text) { return canonicalize(parse_subscription(text)); }

PublicationHeader header(std::string_view text) { return parse_header(text); }

// Plain list of registrations, matched by exhaustive scan.
struct LinearOracle {
    std::map<std::string, std::pair<std::string, Subscription>> subs;

    std::vector<ClientRef> match(const PublicationHeader &h) const {
        std::vector<ClientRef> out;
        for (const auto &[id, entry] : subs) {
            if (matches(h, entry.second)) out.push_back({entry.first, id});
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

NodeId node_of(const ContainmentIndex &idx, std::string_view text) {
    for (NodeId n : idx.nodes()) {
        if (idx.canonical_text(n) == text) return n;
    }
    FAIL("node not found: " << text);
    return 0;
}

bool audit_clean(const ContainmentIndex &idx) {
    const auto issues = idx.audit();
    for (const auto &i : issues) MESSAGE(i);
    return issues.empty();
}

bool has_edge(const ContainmentIndex &idx, NodeId p, NodeId c) {
    const auto &kids = idx.children(p);
    return std::find(kids.begin(), kids.end(), c) != kids.end();
}

} // namespace

TEST_CASE("insert places a covered subscription below its cover") {
    ContainmentIndex idx;
    const auto wide = sub("x>0");
    const auto narrow = sub("x=1");
    REQUIRE(covers(wide, narrow));
    const auto a = idx.insert(wide, "c1", "s1");
    const auto b = idx.insert(narrow, "c2", "s2");
    CHECK(has_edge(idx, a, b));
    CHECK(idx.parents(b) == std::vector<NodeId>{a});
    CHECK(idx.stats().root_count == 1);

    // insertion order does not matter
    ContainmentIndex rev;
    const auto b2 = rev.insert(narrow, "c2", "s2");
    const auto a2 = rev.insert(wide, "c1", "s1");
    CHECK(has_edge(rev, a2, b2));
    CHECK(rev.stats().root_count == 1);
    CHECK(audit_clean(rev));
}

TEST_CASE("equal subscriptions share a node") {
    ContainmentIndex idx;
    const auto n1 = idx.insert(sub("symbol=\"HAL\"&price<50"), "c1", "s1");
    const auto n2 = idx.insert(sub("price<50&symbol=\"HAL\""), "c2", "s2");
    CHECK(n1 == n2);
    CHECK(idx.stats().node_count == 1);
    CHECK(idx.clients(n1).size() == 2);
    CHECK_THROWS_AS(idx.insert(sub("x=1"), "c3", "s1"), IndexError);
    CHECK_THROWS_AS(idx.insert(parse_subscription("z<1&a<1"), "c3", "s9"), IndexError);
}

TEST_CASE("incomparable subscriptions are separate roots") {
    ContainmentIndex idx;
    const auto x = sub("x=1");
    const auto y = sub("y=2");
    REQUIRE_FALSE(covers(x, y));
    REQUIRE_FALSE(covers(y, x));
    idx.insert(x, "c1", "s1");
    idx.insert(y, "c2", "s2");
    const auto st = idx.stats();
    CHECK(st.root_count == 2);
    for (NodeId n : idx.nodes()) CHECK(idx.children(n).empty());
}

TEST_CASE("insert between a chain removes the shortcut edge") {
    ContainmentIndex idx;
    const auto a = idx.insert(sub("x>0"), "c", "a");
    const auto c = idx.insert(sub("x=[2,3]"), "c", "c");
    REQUIRE(has_edge(idx, a, c));
    const auto b = idx.insert(sub("x=[1,5]"), "c", "b");
    CHECK(has_edge(idx, a, b));
    CHECK(has_edge(idx, b, c));
    CHECK_FALSE(has_edge(idx, a, c));
    CHECK(idx.stats().max_depth == 3);
    CHECK(idx.stats().root_count == 1);
    CHECK(audit_clean(idx));
}

TEST_CASE("remove splices a mid-chain node") {
    ContainmentIndex idx;
    idx.insert(sub("x>0"), "c", "a");
    idx.insert(sub("x=[1,5]"), "c", "b");
    idx.insert(sub("x=[2,3]"), "c", "c");
    REQUIRE(idx.remove("b"));
    const auto a = node_of(idx, "x>0");
    const auto c = node_of(idx, "x=[2,3]");
    CHECK(has_edge(idx, a, c));
    CHECK(audit_clean(idx));
    CHECK(idx.stats().node_count == 2);
}

TEST_CASE("remove keeps a shared node and reports unknown ids") {
    ContainmentIndex idx;
    const auto n = idx.insert(sub("x=1"), "c1", "s1");
    idx.insert(sub("x=1"), "c2", "s2");
    CHECK(idx.remove("s1"));
    CHECK(idx.stats().node_count == 1);
    CHECK(idx.clients(n) == std::vector<ClientRef>{{"c2", "s2"}});

    const auto before = idx.stats();
    CHECK_FALSE(idx.remove("nope"));
    CHECK(idx.stats() == before);
}

TEST_CASE("remove does not add an edge already implied by another parent") {
    // a covers b and d; b covers c; x between a and {c}: removing x must not link a->c
    // when b still provides the path
    ContainmentIndex idx;
    idx.insert(sub("x>0"), "c", "a");
    idx.insert(sub("x=[1,9]"), "c", "b");
    idx.insert(sub("x=[2,3]&y>0"), "c", "cc");
    idx.insert(sub("x>1&y>0"), "c", "mid");
    CHECK(audit_clean(idx));
    REQUIRE(idx.remove("mid"));
    CHECK(audit_clean(idx));
    CHECK_FALSE(has_edge(idx, node_of(idx, "x>0"), node_of(idx, "x=[2,3]&y>0")));
}

TEST_CASE("match walks matching nodes only") {
    ContainmentIndex idx;
    CHECK(sorted(idx.match(header("x=1"))).empty());

    idx.insert(sub("x>0"), "c1", "s1");
    idx.insert(sub("x=1"), "c2", "s2");
    const std::vector<ClientRef> both{{"c1", "s1"}, {"c2", "s2"}};
    CHECK(sorted(idx.match(header("x=1"))) == both);
    CHECK(sorted(idx.match(header("x=2"))) == std::vector<ClientRef>{{"c1", "s1"}});
    CHECK(sorted(idx.match(header("x=0"))).empty());

    idx.insert(sub("symbol=\"HAL\"&price<50"), "c3", "s3");
    CHECK(sorted(idx.match(header("price=49.5&symbol=\"HAL\""))) == std::vector<ClientRef>{{"c3", "s3"}});
    CHECK(sorted(idx.match(header("price=51&symbol=\"HAL\""))).empty());
}

TEST_CASE("stats") {
    ContainmentIndex idx;
    CHECK(idx.stats() == IndexStats{0, 0, 0, 0});
    idx.insert(sub("x>0"), "c", "a");
    idx.insert(sub("x=[1,5]"), "c", "b");
    idx.insert(sub("x=[2,3]"), "c", "c");
    idx.insert(sub("x=[2,3]"), "d", "d");
    const auto st = idx.stats();
    CHECK(st.node_count == 3);
    CHECK(st.root_count == 1);
    CHECK(st.max_depth == 3);
    const std::size_t text = std::string("x>0").size() + std::string("x=[1,5]").size() +
                             std::string("x=[2,3]").size();
    CHECK(st.footprint_bytes == text + 3 * kNodeBytes + 2 * kEdgeBytes + 4 * kClientBytes);
}

TEST_CASE("corrupting an edge is caught by the audit") {
    ContainmentIndex idx;
    const auto a = idx.insert(sub("x>0"), "c", "a");
    const auto b = idx.insert(sub("x=1"), "c", "b");
    REQUIRE(audit_clean(idx));
    idx.corrupt_remove_edge(a, b);
    CHECK_FALSE(idx.audit().empty());
}

TEST_CASE("property: match equals linear scan under random churn") {
    std::mt19937_64 rng(21);
    for (int round = 0; round < 40; ++round) {
        ContainmentIndex idx;
        LinearOracle oracle;
        std::vector<std::string> live;
        int next = 0;
        for (int step = 0; step < 300; ++step) {
            if (!live.empty() && testing::coin(rng, 0.3)) {
                const auto k = static_cast<std::size_t>(testing::uniform_int(rng, 0, int(live.size()) - 1));
                REQUIRE(idx.remove(live[k]));
                oracle.subs.erase(live[k]);
                live.erase(live.begin() + long(k));
            } else {
                const auto s = testing::random_subscription(rng, 3, 1);
                const auto id = "s" + std::to_string(next++);
                const auto client = "c" + std::to_string(testing::uniform_int(rng, 0, 9));
                idx.insert(s, client, id);
                oracle.subs[id] = {client, s};
                live.push_back(id);
            }
            const auto h = testing::random_header(rng);
            REQUIRE(sorted(idx.match(h)) == oracle.match(h));
        }
        REQUIRE(audit_clean(idx));
    }
}

TEST_CASE("property: same insertion sequence gives the same stats") {
    auto build = [] {
        std::mt19937_64 rng(5);
        ContainmentIndex idx;
        for (int i = 0; i < 400; ++i) {
            idx.insert(testing::random_subscription(rng, 3, 1), "c", "s" + std::to_string(i));
        }
        for (int i = 0; i < 400; i += 3) idx.remove("s" + std::to_string(i));
        return idx.stats();
    };
    CHECK(build() == build());
}

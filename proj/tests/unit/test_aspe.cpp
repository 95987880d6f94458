#include <doctest.h>

#include "scbr/aspe.hpp"
#include "support/generators.hpp"

#include <cmath>

using namespace scbr;
using namespace scbr::aspe;

namespace {

double rel_err(double got, double want) { return std::abs(got - want) / (1.0 + std::abs(want)); }

Vector random_vector(std::mt19937_64 &rng, double scale) {
    std::uniform_real_distribution<double> d(-scale, scale);
    return Vector(d(rng), d(rng), d(rng), d(rng));
}

} // namespace

TEST_CASE("key generation") {
    const auto a = AspeKey::generate(7);
    const auto b = AspeKey::generate(7);
    const auto c = AspeKey::generate(8);
    CHECK(a.m() == b.m());
    CHECK(a.m() != c.m());
    CHECK(a.text_code("s", "HAL") == b.text_code("s", "HAL"));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto k = AspeKey::generate(seed);
        CHECK(k.condition() <= kMaxCondition);
        const Matrix err = k.m() * k.m_inverse() - Matrix::Identity();
        CHECK(err.cwiseAbs().rowwise().sum().maxCoeff() <= 1e-9);
    }
    CHECK(AspeKey::identity().m() == Matrix::Identity());
}

TEST_CASE("scalar products survive encryption") {
    std::mt19937_64 rng(11);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto k = AspeKey::generate(seed);
        for (int i = 0; i < 100; ++i) {
            const Vector u = random_vector(rng, i % 2 ? 1.0 : 100.0);
            const Vector v = random_vector(rng, i % 3 ? 1.0 : 100.0);
            const double plain = u(0) * v(0) + u(1) * v(1) + u(2) * v(2) + u(3) * v(3);
            const double enc = (k.m().transpose() * u).dot(k.m_inverse() * v);
            CHECK(std::abs(enc - plain) <= 1e-6 * (1 + std::abs(plain)));
            ++checked;
        }
    }
    CHECK(checked == 1000);
}

TEST_CASE("identity key exposes the plain vectors") {
    const auto k = AspeKey::identity();
    std::mt19937_64 rng(1);
    PublicationHeader h;
    h.add("price", 49.0);
    const auto ep = encrypt_pub(k, h, rng);
    const auto *u = ep.find(attribute_tag("price"));
    REQUIRE(u);
    CHECK((*u)(0) == 49.0);
    CHECK((*u)(1) == 1.0);

    Subscription s{{Constraint::less("price", 50)}, "", ""};
    const auto es = encrypt_sub(k, s, rng);
    REQUIRE(es.constraints.size() == 1);
    const auto &c = es.constraints[0];
    CHECK(c.dir == Direction::Lt);
    CHECK_FALSE(c.inclusive);
    const double r = -c.v(0);
    CHECK(r > 0.5);
    CHECK(r < 2.0);
    CHECK(c.v(1) == doctest::Approx(50 * r));
    CHECK(c.v(2) == 0.0);
    CHECK(c.v(3) == 0.0);
    // v.u = r (50 - x)
    CHECK(u->dot(c.v) == doctest::Approx(r * 1.0));
    CHECK(es.tokens.empty());
}

TEST_CASE("subscription encoding shapes") {
    const auto k = AspeKey::generate(3);
    std::mt19937_64 rng(2);

    const auto text = encrypt_sub(k, Subscription{{Constraint::equals("symbol", std::string("HAL"))}, "", ""}, rng);
    CHECK(text.tokens == std::vector<Bloom>{bloom_token("symbol", "HAL")});
    REQUIRE(text.constraints.size() == 2);
    CHECK(text.constraints[0].inclusive);
    CHECK(text.constraints[1].inclusive);

    const auto interval = encrypt_sub(k, Subscription{{Constraint::between("x", 10, true, 20, true)}, "", ""}, rng);
    REQUIRE(interval.constraints.size() == 2);
    CHECK(interval.constraints[0].dir == Direction::Gt);
    CHECK(interval.constraints[1].dir == Direction::Lt);
    CHECK(interval.constraints[0].inclusive);
    CHECK(interval.constraints[1].inclusive);
    CHECK(interval.tokens.empty());

    const auto point = encrypt_sub(k, Subscription{{Constraint::equals("x", 5.0)}, "", ""}, rng);
    CHECK(point.constraints.size() == 2);
    CHECK(point.tokens == std::vector<Bloom>{bloom_token("x", "5")});

    const auto any = encrypt_sub(k, Subscription{{Constraint("x", NumericRange{})}, "", ""}, rng);
    REQUIRE(any.constraints.size() == 1);
    CHECK(any.constraints[0].dir == Direction::Present);
}

TEST_CASE("running example and fresh randomness") {
    const auto k = AspeKey::generate(21);
    std::mt19937_64 rng(4);
    const auto sub = encrypt_sub(k, Subscription{{Constraint::less("price", 50)}, "", ""}, rng);
    PublicationHeader h49, h51;
    h49.add("price", 49.0);
    h51.add("price", 51.0);
    CHECK(match(encrypt_pub(k, h49, rng), sub));
    CHECK_FALSE(match(encrypt_pub(k, h51, rng), sub));

    PublicationHeader h;
    h.add("price", 49.5).add("symbol", std::string("HAL"));
    const auto e1 = encrypt_pub(k, h, rng);
    const auto e2 = encrypt_pub(k, h, rng);
    CHECK(e1.vectors[0].second != e2.vectors[0].second);
    CHECK(e1.bloom == e2.bloom);
    std::mt19937_64 srng(5);
    for (int i = 0; i < 500; ++i) {
        const auto es = encrypt_sub(k, testing::random_subscription(srng, 3, 1), rng);
        CHECK(match(e1, es) == match(e2, es));
    }
}

TEST_CASE("Bloom prefilter") {
    PublicationHeader h;
    h.add("symbol", std::string("HAL")).add("price", 49.5).add("volume", 100.0);
    const auto k = AspeKey::generate(1);
    std::mt19937_64 rng(0);
    const auto ep = encrypt_pub(k, h, rng);
    CHECK(prefilter(ep, {bloom_token("symbol", "HAL")}));
    CHECK(prefilter(ep, {bloom_token("price", "49.5"), bloom_token("volume", "100")}));
    CHECK(prefilter(ep, {}));
    CHECK_FALSE(prefilter(ep, {bloom_token("symbol", "IBM")}));
}

TEST_CASE("Bloom false-positive rate is near the textbook estimate") {
    constexpr int n = 12;
    constexpr int trials = 100000;
    int fp = 0;
    for (int f = 0; f < trials / 1000; ++f) {
        Bloom filter;
        for (int i = 0; i < n; ++i) filter.add(bloom_token("a" + std::to_string(i), std::to_string(f)));
        for (int t = 0; t < 1000; ++t) {
            if (filter.contains(bloom_token("absent", std::to_string(f * 1000 + t)))) ++fp;
        }
    }
    const double expected = std::pow(1 - std::exp(-double(kBloomHashes) * n / kBloomBits), kBloomHashes);
    const double measured = double(fp) / trials;
    MESSAGE("measured " << measured << ", expected " << expected);
    CHECK(measured <= 2 * expected);
    CHECK(measured >= expected / 2);
}

TEST_CASE("property: encrypted match decisions equal plaintext matching") {
    std::mt19937_64 rng(99);
    int agree = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto k = AspeKey::generate(seed + 100);
        for (int i = 0; i < 1000; ++i) {
            const auto s = testing::random_subscription(rng, 4, 0);
            const auto h = testing::random_header(rng);
            const bool want = matches(h, s);
            const bool got = match(encrypt_pub(k, h, rng), encrypt_sub(k, s, rng));
            if (want == got) ++agree;
            else
                FAIL_CHECK("disagree on " << serialize(s) << " vs " << serialize(h));
        }
    }
    CHECK(agree == 10000);
}

TEST_CASE("scaled attributes keep decisions exact near grid thresholds") {
    auto k = AspeKey::generate(5);
    k.fit_scale("cap", 1e11);
    CHECK(k.scale("cap") == std::exp2(37));
    CHECK_THROWS_AS(k.set_scale("x", 3.0), std::invalid_argument);
    std::mt19937_64 rng(8);
    for (int i = 0; i < 2000; ++i) {
        const double x = 1e4 * testing::uniform_int(rng, 100, 10000000);
        const double t = 1e4 * testing::uniform_int(rng, 100, 10000000) + (i % 2 ? 5e3 : 0.0);
        const auto c = i % 4 < 2 ? Constraint::less_equal("cap", t) : Constraint::greater("cap", t);
        PublicationHeader h;
        h.add("cap", x);
        Subscription s{{c}, "", ""};
        REQUIRE(match(encrypt_pub(k, h, rng), encrypt_sub(k, s, rng)) == matches(h, s));
    }
}

TEST_CASE("linear-scan matcher") {
    const auto k = AspeKey::generate(4);
    std::mt19937_64 rng(12);
    AspeMatcher m;
    std::vector<std::pair<Subscription, ClientRef>> plain;
    for (int i = 0; i < 200; ++i) {
        auto s = testing::random_subscription(rng, 3, 1);
        ClientRef who{"c" + std::to_string(i % 13), "s" + std::to_string(i)};
        m.add(encrypt_sub(k, s, rng), who);
        plain.emplace_back(std::move(s), std::move(who));
    }
    CHECK(m.remove("s7"));
    CHECK_FALSE(m.remove("s7"));
    plain.erase(plain.begin() + 7);
    CHECK(m.size() == 199);
    for (int i = 0; i < 300; ++i) {
        const auto h = testing::random_header(rng);
        std::vector<ClientRef> want;
        for (const auto &[s, who] : plain) {
            if (matches(h, s)) want.push_back(who);
        }
        std::sort(want.begin(), want.end());
        auto got = m.match(encrypt_pub(k, h, rng));
        std::sort(got.begin(), got.end());
        REQUIRE(got == want);
    }
}

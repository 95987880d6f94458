#include "scbr/bench.hpp"
#include "scbr/config.hpp"
#include "scbr/net.hpp"
#include "scbr/workload.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace scbr;

namespace {

constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot read {}", p.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path &p, std::string_view data) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    out << data;
}

// Output goes to --out when given, stdout otherwise.
class Sink {
public:
    explicit Sink(const std::string &path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw std::runtime_error(fmt::format("cannot write {}", path));
        }
    }
    void line(std::string_view s) {
        auto &os = file_.is_open() ? static_cast<std::ostream &>(file_) : std::cout;
        os << s << '\n';
        os.flush();
    }

private:
    std::ofstream file_;
};

std::vector<std::string> expand_workloads(const std::vector<std::string> &names) {
    if (names.size() == 1 && names[0] == "all") return workload::workload_names();
    for (const auto &n : names) workload::workload_spec(n);
    return names;
}

// Blocks until SIGINT or SIGTERM. Signals are blocked in main before any
// thread starts, so every thread inherits the mask.
void wait_for_signal() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}, shutting down", sig);
}

struct Keys {
    fs::path dir;
    fs::path path(const nlohmann::json &cfg, const char *key, const char *fallback) const {
        const auto p = fs::path(cfg.value(key, std::string(fallback)));
        return p.is_absolute() ? p : dir / p;
    }
};

nlohmann::json config_for(const std::string &flag) {
    return load_config(config_path(flag.empty() ? std::nullopt : std::optional(flag), "scbr.cfg"));
}

net::Endpoint endpoint_of(const nlohmann::json &cfg, const char *key) {
    if (!cfg.contains(key)) throw UsageError(fmt::format("config has no '{}' endpoint", key));
    return net::Endpoint::parse(cfg.at(key).get<std::string>());
}

crypto::SymKey load_sym(const fs::path &p) {
    auto text = read_file(p);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    return crypto::SymKey::from_bytes(crypto::hex_decode(text));
}

Keys keys_dir(const nlohmann::json &cfg) { return Keys{fs::path(cfg.value("key_dir", std::string(".")))}; }

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Content-based routing over sealed subscriptions: datasets, benchmarks and network roles"};
    app.require_subcommand(1);
    spdlog::set_default_logger(spdlog::stderr_color_mt("scbr"));

    std::string workload_name = "e100a1";
    std::vector<std::string> workload_names{"e100a1"};
    std::vector<std::size_t> sizes;
    std::size_t batch = 1000;
    std::string mode = "all";
    std::uint64_t seed = 1;
    int reps = 3;
    std::string out;
    std::string config;

    auto *gen = app.add_subcommand("gen", "write subscription and publication datasets");
    gen->add_option("--workload", workload_name, "workload name")->capture_default_str();
    gen->add_option("--sizes", sizes, "subscription counts, comma-separated")->delimiter(',')->required();
    gen->add_option("--batch", batch, "publications to write")->capture_default_str();
    gen->add_option("--seed", seed)->capture_default_str();
    gen->add_option("--out", out, "output directory")->required();

    auto *bench_cmd = app.add_subcommand("bench", "time matching per publication, CSV out");
    bench_cmd->add_option("--workload", workload_name)->capture_default_str();
    bench_cmd->add_option("--sizes", sizes, "subscription counts, ascending")->delimiter(',');
    bench_cmd->add_option("--batch", batch)->capture_default_str();
    bench_cmd->add_option("--mode", mode, "PLAIN, ENCRYPTED, ASPE, a comma list, or all")->capture_default_str();
    bench_cmd->add_option("--seed", seed)->capture_default_str();
    bench_cmd->add_option("--reps", reps)->capture_default_str();
    bench_cmd->add_option("--out", out, "CSV path (stdout when omitted)");

    std::size_t n_subs = 2000, n_pubs = 500;
    bool corrupt = false;
    auto *verify = app.add_subcommand("verify", "compare all engines against a linear-scan oracle");
    verify->add_option("--workload", workload_names, "workload names or all")->delimiter(',')->capture_default_str();
    verify->add_option("--subs", n_subs)->capture_default_str();
    verify->add_option("--pubs", n_pubs)->capture_default_str();
    verify->add_option("--seed", seed)->capture_default_str();
    verify->add_flag("--corrupt-index", corrupt, "drop one Hasse edge first (negative control)");

    auto *stats = app.add_subcommand("stats", "index shape per size, CSV out");
    stats->add_option("--workload", workload_names, "workload names or all")->delimiter(',')->capture_default_str();
    stats->add_option("--sizes", sizes)->delimiter(',');
    stats->add_option("--seed", seed)->capture_default_str();
    stats->add_option("--out", out);

    auto *keygen = app.add_subcommand("keygen", "create router, box and signing keys plus a sample config");
    keygen->add_option("--out", out, "key directory")->required();

    auto *broker = app.add_subcommand("broker", "run the broker hosting the router");
    broker->add_option("--config", config, "line-delimited JSON config (default $SCBR_CONFIG, then scbr.cfg)");

    auto *publisher = app.add_subcommand("publisher", "run the admission service");
    publisher->add_option("--config", config);

    std::string client_id, listen;
    std::vector<std::string> subscriptions;
    std::size_t count = 0;
    auto *client = app.add_subcommand("client", "subscribe and print deliveries as JSON lines");
    client->add_option("--config", config);
    client->add_option("--id", client_id, "client id")->required();
    client->add_option("--subscribe", subscriptions, "subscription text (repeatable)")->required();
    client->add_option("--listen", listen, "reply address host:port (ephemeral port by default)");
    client->add_option("--count", count, "exit after this many deliveries (0 = run until signalled)");

    std::string header, payload;
    auto *publish = app.add_subcommand("publish", "send one publication");
    publish->add_option("--config", config);
    publish->add_option("--header", header, "canonical header, e.g. price=49.5&symbol=\"HAL\"")->required();
    publish->add_option("--payload", payload, "payload bytes")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kUsageError;
    }

    sigset_t mask;
    sigemptyset(&mask);
    sigaddset(&mask, SIGINT);
    sigaddset(&mask, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &mask, nullptr);

    try {
        if (*gen) {
            auto spec = workload::workload_spec(workload_name, seed);
            std::sort(sizes.begin(), sizes.end());
            fs::create_directories(out);
            const auto pubs = workload::gen_publications(spec, batch);
            const auto subs = workload::gen_subscriptions(spec, sizes.back(), pubs);
            const auto pub_path = fs::path(out) / fmt::format("{}-s{}-pubs-{}.jsonl", workload_name, seed, batch);
            std::ofstream pf(pub_path);
            workload::write_publications(pf, spec, pubs);
            fmt::print("{}\n", pub_path.string());
            for (auto n : sizes) {
                const auto path = fs::path(out) / fmt::format("{}-s{}-subs-{}.jsonl", workload_name, seed, n);
                std::ofstream sf(path);
                workload::write_subscriptions(sf, spec, {subs.begin(), subs.begin() + static_cast<std::ptrdiff_t>(n)});
                fmt::print("{}\n", path.string());
            }
            return 0;
        }

        if (*bench_cmd) {
            bench::BenchConfig cfg;
            cfg.workload = workload_name;
            if (!sizes.empty()) cfg.sizes = sizes;
            cfg.batch = batch;
            cfg.modes = bench::parse_modes(mode);
            cfg.reps = reps;
            cfg.seed = seed;
            try {
                cfg.validate();
            } catch (const std::invalid_argument &e) {
                throw UsageError(e.what());
            }
            Sink sink(out);
            sink.line(bench::csv_header());
            bench::bench_match(cfg, [&](const bench::BenchRecord &r) {
                spdlog::info("{} {} n={} mean={:.2f}us", r.workload, bench::to_string(r.mode), r.db_size, r.mean_us);
                sink.line(bench::to_csv(r));
            });
            return 0;
        }

        if (*verify) {
            bench::VerifyOptions opts;
            opts.corrupt_index = corrupt;
            bool all_ok = true;
            for (const auto &w : expand_workloads(workload_names)) {
                const auto rep = bench::verify_oracle(w, n_subs, n_pubs, seed, opts);
                fmt::print("{} subs={} pubs={} oracle_matches={} plain={} encrypted={} aspe={} audit={} {}\n", w,
                           rep.n_subs, rep.n_pubs, rep.oracle_matches, rep.plain_mismatches, rep.enclave_mismatches,
                           rep.aspe_mismatches, rep.audit.size(), rep.ok() ? "OK" : "FAIL");
                for (const auto &d : rep.diffs) fmt::print("  diff {}\n", d);
                for (std::size_t i = 0; i < rep.audit.size() && i < 20; ++i) fmt::print("  audit {}\n", rep.audit[i]);
                all_ok = all_ok && rep.ok();
            }
            return all_ok ? 0 : 1;
        }

        if (*stats) {
            if (sizes.empty()) sizes = bench::kDefaultSizes;
            Sink sink(out);
            sink.line(bench::stats_csv_header());
            for (const auto &w : expand_workloads(workload_names))
                for (const auto &row : bench::report_stats(w, sizes, seed)) sink.line(bench::to_csv(row));
            return 0;
        }

        if (*keygen) {
            const fs::path dir(out);
            fs::create_directories(dir);
            const auto keys = net::PublisherKeys::generate();
            write_file(dir / "router.key", crypto::hex_encode(keys.sk.bytes()) + "\n");
            write_file(dir / "box.pem", keys.box.private_key.to_pem());
            write_file(dir / "box.pub.pem", keys.box.public_key.to_pem());
            write_file(dir / "signer.pem", keys.signer.private_key.to_pem());
            write_file(dir / "signer.pub.pem", keys.signer.public_key.to_pem());
            nlohmann::json cfg{{"key_dir", fs::absolute(dir).string()},
                               {"broker", "127.0.0.1:7400"},
                               {"publisher", "127.0.0.1:7401"},
                               {"version", 1},
                               {"allow", nlohmann::json::array()}};
            write_file(dir / "scbr.cfg", cfg.dump() + "\n");
            fmt::print("{}\n", (dir / "scbr.cfg").string());
            return 0;
        }

        if (*broker) {
            const auto cfg = config_for(config);
            const auto keys = keys_dir(cfg);
            ProvisioningBlob blob{load_sym(keys.path(cfg, "router_key", "router.key")),
                                  crypto::PublicKey::from_pem(read_file(keys.path(cfg, "signer_pub", "signer.pub.pem"))),
                                  cfg.value("version", std::uint64_t{1})};
            net::Broker b(blob, endpoint_of(cfg, "broker"));
            b.start();
            spdlog::info("broker listening on {}", b.endpoint().str());
            wait_for_signal();
            const auto c = b.counters();
            spdlog::info("frames={} errors={} delivered={} dropped={}", c.frames, c.errors, c.delivered, c.dropped);
            return 0;
        }

        if (*publisher) {
            const auto cfg = config_for(config);
            const auto keys = keys_dir(cfg);
            const auto box = crypto::PrivateKey::from_pem(read_file(keys.path(cfg, "box_key", "box.pem")));
            const auto signer = crypto::PrivateKey::from_pem(read_file(keys.path(cfg, "signer_key", "signer.pem")));
            net::PublisherKeys pk{load_sym(keys.path(cfg, "router_key", "router.key")),
                                  crypto::KeyPair{box.public_key(), box},
                                  crypto::KeyPair{signer.public_key(), signer}};
            net::Publisher p(std::move(pk), endpoint_of(cfg, "broker"), endpoint_of(cfg, "publisher"));
            for (const auto &c : cfg.value("allow", std::vector<std::string>{})) p.policy().allow(c);
            for (const auto &c : cfg.value("revoked", std::vector<std::string>{})) p.policy().revoke(c);
            p.start();
            spdlog::info("publisher listening on {}", p.endpoint().str());
            wait_for_signal();
            return 0;
        }

        if (*client) {
            const auto cfg = config_for(config);
            const auto keys = keys_dir(cfg);
            const auto box = crypto::PublicKey::from_pem(read_file(keys.path(cfg, "box_pub", "box.pub.pem")));
            std::mutex mu;
            std::condition_variable cv;
            std::size_t got = 0;
            net::Subscriber sub(
                client_id, box,
                [&](const wire::Deliver &d) {
                    std::lock_guard lock(mu);
                    fmt::print("{}\n", nlohmann::json{{"pub", d.pub}, {"payload", d.payload}}.dump(
                                           -1, ' ', false, nlohmann::json::error_handler_t::replace));
                    std::fflush(stdout);
                    ++got;
                    cv.notify_all();
                },
                listen.empty() ? net::Endpoint{} : net::Endpoint::parse(listen));
            const auto pub_ep = endpoint_of(cfg, "publisher");
            for (const auto &s : subscriptions) spdlog::info("subscribed {}", sub.subscribe(s, pub_ep));
            if (count > 0) {
                std::unique_lock lock(mu);
                cv.wait(lock, [&] { return got >= count; });
            } else {
                wait_for_signal();
            }
            return 0;
        }

        if (*publish) {
            const auto cfg = config_for(config);
            const auto keys = keys_dir(cfg);
            net::Producer prod(load_sym(keys.path(cfg, "router_key", "router.key")), endpoint_of(cfg, "broker"));
            fmt::print("{}\n", prod.publish(parse_header(header), payload));
            return 0;
        }
    } catch (const workload::UnknownWorkload &e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsageError;
    } catch (const UsageError &e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsageError;
    } catch (const std::exception &e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}

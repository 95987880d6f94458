#include "scbr/net.hpp"

#include <boost/asio.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <sys/socket.h>

#include <array>
#include <charconv>
#include <list>

namespace scbr::net {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using boost::system::error_code;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string take_line(asio::streambuf &buf, std::size_t n) {
    const auto *begin = static_cast<const char *>(buf.data().data());
    std::string line(begin, n - 1);
    buf.consume(n);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::string err_line(std::string ref, std::string msg) {
    return wire::encode_frame(wire::Err{std::move(ref), std::move(msg)});
}

std::string random_id(std::string_view prefix, std::size_t bytes) {
    return std::string(prefix) + crypto::hex_encode(crypto::random_bytes(bytes));
}

} // namespace

Rejected::Rejected(std::string reason)
    : NetError(fmt::format("rejected: {}", reason)), reason_(std::move(reason)) {}

Endpoint Endpoint::parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
        throw std::invalid_argument(fmt::format("endpoint '{}' is not host:port", text));
    unsigned port = 0;
    const auto digits = text.substr(colon + 1);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535)
        throw std::invalid_argument(fmt::format("endpoint '{}' has a bad port", text));
    return Endpoint{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::str() const { return fmt::format("{}:{}", host, port); }

// ---------------------------------------------------------------- LineChannel

struct LineChannel::Impl {
    asio::io_context ctx;
    tcp::socket sock{ctx};
    asio::streambuf buf{kMaxLine + 1};
    std::string peer;

    // Runs queued async work; on deadline the socket is closed.
    void run(Duration timeout, std::string_view what) {
        ctx.restart();
        ctx.run_for(timeout);
        if (!ctx.stopped()) {
            error_code ignored;
            sock.close(ignored);
            ctx.run();
            throw TimeoutError(fmt::format("{} {}: no answer within {} ms", what, peer, timeout.count()));
        }
    }
};

LineChannel::LineChannel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
LineChannel::LineChannel(LineChannel &&) noexcept = default;
LineChannel &LineChannel::operator=(LineChannel &&) noexcept = default;
LineChannel::~LineChannel() { close(); }

LineChannel LineChannel::connect(const Endpoint &to, Duration timeout) {
    auto impl = std::make_unique<Impl>();
    impl->peer = to.str();
    tcp::resolver resolver(impl->ctx);
    error_code ec;
    const auto results = resolver.resolve(to.host, std::to_string(to.port), ec);
    if (ec) throw TimeoutError(fmt::format("could not resolve {}: {}", impl->peer, ec.message()));
    error_code result = asio::error::would_block;
    asio::async_connect(impl->sock, results, [&](const error_code &e, const tcp::endpoint &) { result = e; });
    impl->run(timeout, "connect");
    if (result) throw TimeoutError(fmt::format("could not reach {}: {}", impl->peer, result.message()));
    impl->sock.set_option(tcp::no_delay(true), ec);
    return LineChannel(std::move(impl));
}

void LineChannel::send(std::string_view line, Duration timeout) {
    if (!is_open()) throw NetError("channel is closed");
    static constexpr char nl = '\n';
    const std::array<asio::const_buffer, 2> bufs{asio::buffer(line.data(), line.size()), asio::buffer(&nl, 1)};
    error_code result = asio::error::would_block;
    asio::async_write(impl_->sock, bufs, [&](const error_code &e, std::size_t) { result = e; });
    impl_->run(timeout, "send to");
    if (result) {
        close();
        throw NetError(fmt::format("send to {} failed: {}", impl_->peer, result.message()));
    }
}

std::string LineChannel::receive(Duration timeout) {
    if (!is_open()) throw NetError("channel is closed");
    error_code result = asio::error::would_block;
    std::size_t n = 0;
    asio::async_read_until(impl_->sock, impl_->buf, '\n', [&](const error_code &e, std::size_t got) {
        result = e;
        n = got;
    });
    impl_->run(timeout, "receive from");
    if (result) {
        close();
        throw NetError(fmt::format("receive from {} failed: {}", impl_->peer, result.message()));
    }
    return take_line(impl_->buf, n);
}

std::string LineChannel::request(std::string_view line, Duration timeout) {
    send(line, timeout);
    return receive(timeout);
}

void LineChannel::close() noexcept {
    if (!impl_) return;
    error_code ignored;
    impl_->sock.shutdown(tcp::socket::shutdown_both, ignored);
    impl_->sock.close(ignored);
}

bool LineChannel::is_open() const noexcept { return impl_ && impl_->sock.is_open(); }

// ----------------------------------------------------------------- LineServer

struct LineServer::Impl {
    struct Conn {
        std::shared_ptr<tcp::socket> sock;
        std::shared_ptr<std::atomic<bool>> done;
        std::thread thread;
    };

    asio::io_context ctx;
    tcp::acceptor acceptor{ctx};
    Endpoint ep;
    Handler on_line;
    std::thread accept_thread;
    std::mutex mu;
    std::list<Conn> conns;
    std::atomic<bool> stopping{false};
    bool started = false;

    void serve(const std::shared_ptr<tcp::socket> &sock) {
        asio::streambuf buf(kMaxLine + 1);
        for (;;) {
            error_code ec;
            const auto n = asio::read_until(*sock, buf, '\n', ec);
            if (ec) break; // eof, shutdown, or a line longer than kMaxLine
            const auto line = take_line(buf, n);
            std::optional<std::string> reply;
            try {
                reply = on_line(line);
            } catch (const std::exception &e) {
                spdlog::error("line handler failed: {}", e.what());
                reply = err_line("", "internal");
            }
            if (reply) {
                reply->push_back('\n');
                asio::write(*sock, asio::buffer(*reply), ec);
                if (ec) break;
            }
        }
        error_code ignored;
        sock->shutdown(tcp::socket::shutdown_both, ignored);
    }

    void reap() {
        for (auto it = conns.begin(); it != conns.end();) {
            if (it->done->load()) {
                it->thread.join();
                it = conns.erase(it);
            } else {
                ++it;
            }
        }
    }

    void accept_loop() {
        while (!stopping) {
            auto sock = std::make_shared<tcp::socket>(ctx);
            error_code ec;
            acceptor.accept(*sock, ec);
            if (stopping) break;
            if (ec) {
                spdlog::warn("accept on {} failed: {}", ep.str(), ec.message());
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
                continue;
            }
            sock->set_option(tcp::no_delay(true), ec);
            auto done = std::make_shared<std::atomic<bool>>(false);
            std::lock_guard lock(mu);
            reap();
            conns.push_back(Conn{sock, done, std::thread([this, sock, done] {
                                     serve(sock);
                                     done->store(true);
                                 })});
        }
    }
};

LineServer::LineServer(Endpoint listen, Handler on_line) : impl_(std::make_unique<Impl>()) {
    impl_->ep = std::move(listen);
    impl_->on_line = std::move(on_line);
}

LineServer::~LineServer() { stop(); }

void LineServer::start() {
    auto &im = *impl_;
    if (im.started) return;
    tcp::resolver resolver(im.ctx);
    const auto results = resolver.resolve(im.ep.host, std::to_string(im.ep.port));
    const tcp::endpoint bind_to = results.begin()->endpoint();
    im.acceptor.open(bind_to.protocol());
    im.acceptor.set_option(tcp::acceptor::reuse_address(true));
    im.acceptor.bind(bind_to);
    im.acceptor.listen();
    im.ep.port = im.acceptor.local_endpoint().port();
    im.started = true;
    im.accept_thread = std::thread([&im] { im.accept_loop(); });
}

void LineServer::stop() {
    auto &im = *impl_;
    if (!im.started) return;
    im.started = false;
    im.stopping = true;
    // shutdown() wakes the blocked accept/read calls without racing on the socket objects
    ::shutdown(im.acceptor.native_handle(), SHUT_RDWR);
    if (im.accept_thread.joinable()) im.accept_thread.join();
    error_code ignored;
    im.acceptor.close(ignored);
    std::list<Impl::Conn> conns;
    {
        std::lock_guard lock(im.mu);
        conns.swap(im.conns);
    }
    for (auto &c : conns) ::shutdown(c.sock->native_handle(), SHUT_RDWR);
    for (auto &c : conns) c.thread.join();
}

Endpoint LineServer::endpoint() const { return impl_->ep; }

// --------------------------------------------------------------------- Broker

Broker::Broker(const ProvisioningBlob &blob, Endpoint listen, Duration delivery_timeout)
    : delivery_timeout_(delivery_timeout) {
    router_.provision(blob);
    server_ = std::make_unique<LineServer>(std::move(listen),
                                           [this](std::string_view line) { return handle_line(line); });
}

Broker::~Broker() { stop(); }

void Broker::start() { server_->start(); }

void Broker::stop() {
    server_->stop();
    std::lock_guard lock(links_mu_);
    links_.clear();
}

Endpoint Broker::endpoint() const { return server_->endpoint(); }

void Broker::set_tap(Tap tap) {
    std::lock_guard lock(tap_mu_);
    tap_ = std::move(tap);
}

void Broker::tap(std::string_view line) const {
    std::lock_guard lock(tap_mu_);
    if (tap_) tap_(line);
}

BrokerCounters Broker::counters() const {
    return {frames_.load(), errors_.load(), delivered_.load(), dropped_.load()};
}

std::string Broker::handle_line(std::string_view line) {
    ++frames_;
    tap(line);
    wire::Record reply;
    try {
        const auto rec = wire::decode_frame(line);
        reply = std::visit(
            Overloaded{
                [&](const wire::SubReg &f) -> wire::Record {
                    std::lock_guard lock(mutations_);
                    return router_.ecall_register(f);
                },
                [&](const wire::Unsub &f) -> wire::Record {
                    std::lock_guard lock(mutations_);
                    return router_.ecall_invalidate(f);
                },
                [&](const wire::Pub &f) -> wire::Record {
                    auto out = router_.ecall_match(f);
                    if (!out.ok()) return *out.error;
                    deliver(out.routes, wire::Deliver{f.pub, f.payload});
                    return wire::Ack{f.pub, ""};
                },
                [&](const auto &) -> wire::Record { return wire::Err{"", "unexpected"}; },
            },
            rec);
    } catch (const wire::FrameError &) {
        reply = wire::Err{"", "format"};
    } catch (const std::exception &e) {
        spdlog::error("broker frame handling failed: {}", e.what());
        reply = wire::Err{"", "internal"};
    }
    if (std::holds_alternative<wire::Err>(reply)) ++errors_;
    auto out = wire::encode_frame(reply);
    tap(out);
    return out;
}

void Broker::deliver(const std::vector<Route> &routes, const wire::Deliver &frame) {
    if (routes.empty()) return;
    const auto line = wire::encode_frame(frame);
    for (const auto &route : routes) {
        std::shared_ptr<std::pair<std::mutex, std::optional<LineChannel>>> link;
        {
            std::lock_guard lock(links_mu_);
            auto &slot = links_[route.reply_addr];
            if (!slot) slot = std::make_shared<std::pair<std::mutex, std::optional<LineChannel>>>();
            link = slot;
        }
        std::lock_guard lock(link->first);
        auto &channel = link->second;
        try {
            if (!channel || !channel->is_open())
                channel = LineChannel::connect(Endpoint::parse(route.reply_addr), delivery_timeout_);
            channel->send(line, delivery_timeout_);
            ++delivered_;
            tap(line);
        } catch (const std::exception &e) {
            channel.reset();
            ++dropped_;
            spdlog::debug("delivery to {} dropped: {}", route.reply_addr, e.what());
        }
    }
}

// ------------------------------------------------------------ AdmissionPolicy

void AdmissionPolicy::allow(const std::string &client) {
    std::lock_guard lock(mu_);
    revoked_.erase(client);
    allowed_.insert(client);
}

void AdmissionPolicy::revoke(const std::string &client) {
    std::lock_guard lock(mu_);
    allowed_.erase(client);
    revoked_.insert(client);
}

bool AdmissionPolicy::admitted(const std::string &client) const {
    std::lock_guard lock(mu_);
    return allowed_.count(client) != 0;
}

bool AdmissionPolicy::revoked(const std::string &client) const {
    std::lock_guard lock(mu_);
    return revoked_.count(client) != 0;
}

// ------------------------------------------------------------------ Publisher

PublisherKeys PublisherKeys::generate() {
    return PublisherKeys{crypto::SymKey::generate(), crypto::KeyPair::generate(), crypto::KeyPair::generate()};
}

ProvisioningBlob PublisherKeys::provisioning(std::uint64_t version) const {
    return ProvisioningBlob{sk, signer.public_key, version};
}

Publisher::Publisher(PublisherKeys keys, Endpoint broker, Endpoint listen)
    : keys_(std::move(keys)), broker_(std::move(broker)) {
    server_ = std::make_unique<LineServer>(std::move(listen),
                                           [this](std::string_view line) { return handle_line(line); });
}

Publisher::~Publisher() { stop(); }

void Publisher::start() { server_->start(); }

void Publisher::stop() {
    server_->stop();
    std::lock_guard lock(broker_mu_);
    broker_link_.reset();
}

Endpoint Publisher::endpoint() const { return server_->endpoint(); }

wire::Record Publisher::admit(const wire::SubReq &req) {
    std::string text;
    try {
        const auto env = crypto::CipherEnvelope::from_bytes(crypto::Scheme::Asym, req.ct);
        text = crypto::asym_open(keys_.box.private_key, env);
    } catch (const crypto::CryptoError &) {
        return wire::Err{"", "format"};
    }
    Subscription sub;
    try {
        sub = canonicalize(parse_subscription(text));
        Endpoint::parse(req.reply);
    } catch (const EmptyConstraint &) {
        return wire::Err{"", "empty"};
    } catch (const std::exception &) {
        return wire::Err{"", "format"};
    }
    if (sub.constraints.empty()) return wire::Err{"", "format"};
    if (!policy_.admitted(req.client)) return wire::Err{"", "denied"};
    return wire::make_subreg(keys_.sk, keys_.signer.private_key, random_id("s-", 8), req.client, req.reply,
                             serialize(sub));
}

wire::Record Publisher::forward(const wire::Record &frame) {
    const auto ref = std::visit(Overloaded{[](const wire::SubReg &f) { return f.sub; },
                                           [](const wire::Unsub &f) { return f.sub; },
                                           [](const auto &) { return std::string(); }},
                                frame);
    const auto line = wire::encode_frame(frame);
    std::lock_guard lock(broker_mu_);
    // One reconnect covers a broker restart; a lost reply is not retried, so
    // nothing is registered twice.
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            if (!broker_link_ || !broker_link_->is_open()) broker_link_ = LineChannel::connect(broker_);
        } catch (const NetError &e) {
            spdlog::warn("broker {} unreachable: {}", broker_.str(), e.what());
            broker_link_.reset();
            return wire::Err{ref, "unavailable"};
        }
        try {
            broker_link_->send(line);
        } catch (const NetError &) {
            broker_link_.reset();
            continue;
        }
        try {
            return wire::decode_frame(broker_link_->receive());
        } catch (const std::exception &e) {
            spdlog::warn("no reply from broker {}: {}", broker_.str(), e.what());
            broker_link_.reset();
            return wire::Err{ref, "unavailable"};
        }
    }
    return wire::Err{ref, "unavailable"};
}

std::string Publisher::handle_line(std::string_view line) {
    wire::Record req;
    try {
        req = wire::decode_frame(line);
    } catch (const wire::FrameError &) {
        return err_line("", "format");
    }
    if (const auto *sr = std::get_if<wire::SubReq>(&req)) {
        auto admitted = admit(*sr);
        if (std::holds_alternative<wire::Err>(admitted)) return wire::encode_frame(admitted);
        const auto &reg = std::get<wire::SubReg>(admitted);
        auto reply = forward(reg);
        if (std::holds_alternative<wire::Ack>(reply)) {
            std::lock_guard lock(issued_mu_);
            issued_[reg.sub] = reg.client;
        }
        return wire::encode_frame(reply);
    }
    if (const auto *un = std::get_if<wire::Unsub>(&req)) {
        {
            std::lock_guard lock(issued_mu_);
            if (issued_.count(un->sub) == 0) return err_line(un->sub, "unknown");
        }
        return wire::encode_frame(invalidate(un->sub));
    }
    return err_line("", "unexpected");
}

wire::Record Publisher::invalidate(const std::string &sub_id) {
    auto reply = forward(wire::make_unsub(keys_.signer.private_key, sub_id));
    if (std::holds_alternative<wire::Ack>(reply)) {
        std::lock_guard lock(issued_mu_);
        issued_.erase(sub_id);
    }
    return reply;
}

void Publisher::revoke_client(const std::string &client) {
    policy_.revoke(client);
    std::vector<std::string> held;
    {
        std::lock_guard lock(issued_mu_);
        for (const auto &[sub, owner] : issued_)
            if (owner == client) held.push_back(sub);
    }
    for (const auto &sub : held) invalidate(sub);
}

// ----------------------------------------------------------------- Subscriber

Subscriber::Subscriber(std::string client_id, crypto::PublicKey publisher_box, Handler on_deliver, Endpoint listen)
    : client_id_(std::move(client_id)), publisher_box_(std::move(publisher_box)), on_deliver_(std::move(on_deliver)) {
    listener_ = std::make_unique<LineServer>(std::move(listen), [this](std::string_view line) {
        try {
            auto rec = wire::decode_frame(line);
            if (const auto *d = std::get_if<wire::Deliver>(&rec)) on_deliver_(*d);
        } catch (const wire::FrameError &e) {
            spdlog::warn("subscriber {} ignored a bad frame: {}", client_id_, e.what());
        }
        return std::optional<std::string>{};
    });
    listener_->start();
}

Subscriber::~Subscriber() { close(); }

void Subscriber::close() { listener_->stop(); }

std::string Subscriber::reply_addr() const { return listener_->endpoint().str(); }

wire::Record Subscriber::call(const wire::Record &frame, const Endpoint &publisher, Duration timeout) {
    using Clock = std::chrono::steady_clock;
    const auto deadline = Clock::now() + timeout;
    const auto left = [&] {
        return std::max(Duration{1}, std::chrono::duration_cast<Duration>(deadline - Clock::now()));
    };
    auto channel = LineChannel::connect(publisher, left());
    channel.send(wire::encode_frame(frame), left());
    try {
        return wire::decode_frame(channel.receive(left()));
    } catch (const wire::FrameError &e) {
        throw NetError(fmt::format("publisher sent a bad frame: {}", e.what()));
    }
}

std::string Subscriber::subscribe(std::string_view subscription_text, const Endpoint &publisher, Duration timeout) {
    const auto env = crypto::asym_seal(publisher_box_, subscription_text);
    const auto reply = call(wire::SubReq{client_id_, reply_addr(), env.to_bytes()}, publisher, timeout);
    if (const auto *ack = std::get_if<wire::Ack>(&reply)) return ack->ref;
    if (const auto *err = std::get_if<wire::Err>(&reply)) {
        if (err->msg == "unavailable") throw TimeoutError("subscription not confirmed: broker unavailable");
        throw Rejected(err->msg);
    }
    throw NetError("publisher answered with an unexpected frame");
}

void Subscriber::unsubscribe(const std::string &sub_id, const Endpoint &publisher, Duration timeout) {
    const auto reply = call(wire::Unsub{sub_id, {}}, publisher, timeout);
    if (const auto *err = std::get_if<wire::Err>(&reply)) {
        if (err->msg == "unavailable") throw TimeoutError("unsubscription not confirmed: broker unavailable");
        throw Rejected(err->msg);
    }
}

// ------------------------------------------------------------------- Producer

Producer::Producer(crypto::SymKey sk, Endpoint broker)
    : sk_(std::move(sk)), broker_(std::move(broker)), prefix_(random_id("p-", 4)) {}

std::string Producer::publish(const PublicationHeader &header, crypto::Bytes payload, Duration timeout) {
    std::lock_guard lock(mu_);
    auto id = fmt::format("{}-{}", prefix_, next_++);
    const auto line = wire::encode_frame(wire::make_pub(sk_, id, serialize(header), std::move(payload)));
    wire::Record reply;
    try {
        if (!link_ || !link_->is_open()) link_ = LineChannel::connect(broker_, timeout);
        link_->send(line, timeout);
        reply = wire::decode_frame(link_->receive(timeout));
    } catch (const TimeoutError &) {
        link_.reset();
        throw;
    } catch (const std::exception &e) {
        link_.reset();
        throw TimeoutError(fmt::format("publish to {} failed: {}", broker_.str(), e.what()));
    }
    if (std::holds_alternative<wire::Ack>(reply)) return id;
    if (const auto *err = std::get_if<wire::Err>(&reply)) throw Rejected(err->msg);
    throw NetError("broker answered with an unexpected frame");
}

} // namespace scbr::net

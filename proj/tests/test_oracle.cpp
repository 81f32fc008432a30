#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/oracle.hpp"
#include "test_support.hpp"

// After Eigen: <resolv.h> defines _res as a macro.
#include <httplib.h>
#include <json.hpp>

using namespace saliency_forge;

namespace {

std::vector<ImageTensor> random_images(std::mt19937_64& rng, std::size_t n, std::size_t side = 4) {
    std::vector<ImageTensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(sf_test::random_image(rng, 3, side, side));
    return out;
}

StubSpec mask_spec(std::size_t h, std::size_t w, std::vector<std::uint8_t> mask) {
    StubSpec spec;
    spec.mask_height = h;
    spec.mask_width = w;
    spec.mask = std::move(mask);
    return spec;
}

// Stub oracle served over HTTP on a free local port for the test's lifetime.
struct LocalServer {
    explicit LocalServer(std::shared_ptr<const Oracle> oracle)
        : server(std::move(oracle), "stub-model") {
        port = server.bind("127.0.0.1", 0);
        server.start_background();
    }
    ~LocalServer() { server.stop(); }

    OracleEndpoint endpoint(std::size_t max_batch = 32) const {
        OracleEndpoint e;
        e.transport = Transport::Network;
        e.address = "http://127.0.0.1:" + std::to_string(port);
        e.max_batch = max_batch;
        e.timeout = std::chrono::milliseconds(5000);
        return e;
    }

    OracleServer server;
    int port = 0;
};

// Fails the first `failures` requests with HTTP 503, then answers like a stub.
struct FlakyServer {
    explicit FlakyServer(int failures, std::string body = {}) : remaining(failures), fixed_body(std::move(body)) {
        server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            if (remaining-- > 0) {
                res.status = 503;
                return;
            }
            if (!fixed_body.empty()) {
                res.set_content(fixed_body, "application/json");
                return;
            }
            const auto images = decode_predict_request(req.body);
            nlohmann::json scores = nlohmann::json::array();
            for (std::size_t i = 0; i < images.size(); ++i) scores.push_back(0.25);
            res.set_content(nlohmann::json{{"scores", scores}}.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FlakyServer() {
        server.stop();
        thread.join();
    }

    OracleEndpoint endpoint() const {
        OracleEndpoint e;
        e.transport = Transport::Network;
        e.address = "http://127.0.0.1:" + std::to_string(port);
        return e;
    }

    httplib::Server server;
    std::thread thread;
    std::atomic<int> remaining;
    std::atomic<int> hits{0};
    std::string fixed_body;
    int port = 0;
};

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("stub kinds") {
    auto rng = sf_test::rng_for(71);
    const auto image = sf_test::random_image(rng, 3, 5, 2);
    CHECK(StubOracle(make_stub("constant", StubSpec{"constant", 0.7}).stub).score_image(image) == 0.7);
    CHECK(StubOracle(make_stub("constant", StubSpec{"constant", 1.0}).stub).score_image(image) == 1.0);

    // 10 designated pixels, 4 of them baselined -> 0.6
    std::vector<std::uint8_t> mask(10, 1);
    StubOracle remaining(make_stub("fraction_remaining", mask_spec(5, 2, mask)).stub);
    auto perturbed = image;
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t c = 0; c < 3; ++c) perturbed.data[c * 10 + p] = 0.0;
    }
    CHECK(remaining.score_image(perturbed) == doctest::Approx(0.6).epsilon(1e-15));

    StubOracle vacuous(make_stub("fraction_remaining", mask_spec(5, 2, std::vector<std::uint8_t>(10, 0))).stub);
    CHECK(vacuous.score_image(perturbed) == 1.0);

    std::vector<std::uint8_t> critical(10, 0);
    critical[0] = critical[1] = 1;
    StubOracle crit(make_stub("segment_critical", mask_spec(5, 2, critical)).stub);
    CHECK(crit.score_image(image) == 1.0);
    CHECK(crit.score_image(perturbed) == 0.0);

    CHECK_THROWS_AS(make_stub("resnet"), ValidationError);
    CHECK_THROWS_AS(make_stub("constant", StubSpec{"constant", 1.5}), ValidationError);
    CHECK_THROWS_AS(remaining.score_image(sf_test::random_image(rng, 3, 2, 5)), ValidationError);
}

TEST_CASE("batch splitting is transparent") {
    auto rng = sf_test::rng_for(72);
    std::vector<std::uint8_t> mask(16);
    for (auto& m : mask) m = rng() % 2;
    const auto images = random_images(rng, 100);
    StubOracle small(make_stub("fraction_remaining", mask_spec(4, 4, mask)).stub, 32);
    StubOracle large(make_stub("fraction_remaining", mask_spec(4, 4, mask)).stub, 1000);
    const auto a = small.target_scores(images, 0);
    const auto b = large.target_scores(images, 0);
    CHECK(small.request_count() == 4);
    CHECK(large.request_count() == 1);
    CHECK(a == b);

    // Any decomposition into sub-batches gives the same scores in order.
    for (std::size_t max_batch : {1, 3, 7, 99}) {
        StubOracle o(make_stub("fraction_remaining", mask_spec(4, 4, mask)).stub, max_batch);
        CHECK(o.target_scores(images, 0) == a);
        CHECK(o.request_count() == (100 + max_batch - 1) / max_batch);
    }
}

TEST_CASE("predict request codec") {
    auto rng = sf_test::rng_for(73);
    const auto images = random_images(rng, 3, 5);
    const auto back = decode_predict_request(encode_predict_request(images));
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].channels == 3);
        for (std::size_t k = 0; k < images[i].data.size(); ++k) {
            CHECK(back[i].data[k] == static_cast<double>(static_cast<float>(images[i].data[k])));
        }
    }
    CHECK_THROWS_AS(decode_predict_request("garbage"), Error);
}

TEST_CASE("http client against the bundled server") {
    auto rng = sf_test::rng_for(74);
    std::vector<std::uint8_t> mask(16);
    for (auto& m : mask) m = rng() % 2;
    mask[0] = 1;
    auto stub = std::make_shared<StubOracle>(make_stub("fraction_remaining", mask_spec(4, 4, mask)).stub);
    LocalServer local(stub);
    HttpOracle client(local.endpoint(32));
    CHECK(client.health() == "stub-model");

    auto images = random_images(rng, 100);
    for (std::size_t i = 0; i < images.size(); i += 3) {
        for (std::size_t c = 0; c < 3; ++c) images[i].data[c * 16] = 0.0;  // baseline pixel 0
    }
    const auto copy = images;
    const auto remote = client.target_scores(images, 5);
    CHECK(client.request_count() == 4);
    CHECK(remote == stub->target_scores(images, 5));
    for (std::size_t i = 0; i < images.size(); ++i) CHECK(images[i].data == copy[i].data);

    const auto full = client.score_batch(std::span<const ImageTensor>(images).first(2), std::nullopt);
    REQUIRE(full.size() == 2);
    REQUIRE(full[0].probabilities.size() == 2);
    CHECK(full[0].probabilities[0] + full[0].probabilities[1] == doctest::Approx(1.0));
}

TEST_CASE("http client is safe across threads") {
    auto rng = sf_test::rng_for(75);
    auto stub = std::make_shared<StubOracle>(make_stub("constant", StubSpec{"constant", 0.3}).stub);
    LocalServer local(stub);
    HttpOracle client(local.endpoint(4));
    const auto images = random_images(rng, 10);
    std::atomic<int> bad{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (double s : client.target_scores(images, 0)) bad += s != 0.3;
        });
    }
    for (auto& t : threads) t.join();
    CHECK(bad == 0);
    CHECK(client.request_count() == 12);
}

TEST_CASE("server rejects malformed requests") {
    auto stub = std::make_shared<StubOracle>(make_stub("constant", StubSpec{"constant", 0.3}).stub);
    LocalServer local(stub);
    httplib::Client raw("127.0.0.1", local.port);
    auto res = raw.Post("/predict", "not an array", "application/octet-stream");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(nlohmann::json::parse(res->body).contains("error"));
    auto health = raw.Get("/healthz");
    REQUIRE(health);
    CHECK(nlohmann::json::parse(health->body)["status"] == "ok");
}

TEST_CASE("transient failures are retried") {
    FlakyServer flaky(2);
    HttpOracle client(flaky.endpoint());
    auto rng = sf_test::rng_for(76);
    const auto scores = client.target_scores(random_images(rng, 2), 0);
    CHECK(scores == std::vector<double>{0.25, 0.25});
    CHECK(flaky.hits == 3);
}

TEST_CASE("persistent failure becomes OracleUnavailableError") {
    FlakyServer down(100);
    HttpOracle client(down.endpoint());
    auto rng = sf_test::rng_for(77);
    const auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(client.target_scores(random_images(rng, 1), 0), OracleUnavailableError);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(down.hits == 4);
    CHECK(elapsed >= std::chrono::milliseconds(2100));
}

TEST_CASE("unreachable address") {
    OracleEndpoint e;
    e.transport = Transport::Network;
    e.address = "http://127.0.0.1:1";
    e.timeout = std::chrono::milliseconds(200);
    HttpOracle client(e);
    CHECK_THROWS_AS(client.health(), OracleUnavailableError);
}

TEST_CASE("malformed responses raise ProtocolError with an excerpt") {
    FlakyServer odd(0, R"({"scores": "definitely not a list"})");
    HttpOracle client(odd.endpoint());
    auto rng = sf_test::rng_for(78);
    try {
        (void)client.target_scores(random_images(rng, 2), 0);
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("definitely not a list") != std::string::npos);
    }
    FlakyServer short_list(0, R"({"scores": [0.5]})");
    HttpOracle client2(short_list.endpoint());
    CHECK_THROWS_AS(client2.target_scores(random_images(rng, 2), 0), ProtocolError);
}

TEST_CASE("endpoint validation") {
    OracleEndpoint e;
    e.max_batch = 0;
    CHECK_THROWS_AS(e.validate(), ValidationError);
    e.max_batch = 1;
    e.transport = Transport::Network;
    CHECK_THROWS_AS(e.validate(), ValidationError);
}

}  // TEST_SUITE

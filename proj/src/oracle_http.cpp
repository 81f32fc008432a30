#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/oracle.hpp"

namespace saliency_forge {

namespace {

using json = nlohmann::json;

std::string excerpt(const std::string& body) {
    constexpr std::size_t kMax = 200;
    return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

std::unique_ptr<httplib::Client> make_client(const OracleEndpoint& endpoint) {
    auto client = std::make_unique<httplib::Client>(endpoint.address);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    const auto usecs =
        std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());
    return client;
}

bool transient_status(int status) { return status == 502 || status == 503 || status == 504; }

// Issues `send` with the fixed retry schedule; returns the first non-transient response.
template <typename Send>
httplib::Result with_retries(const OracleEndpoint& endpoint, const char* what, Send send) {
    std::string last_error;
    const std::size_t attempts = 1 + std::size(HttpOracle::kRetryDelays);
    for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(HttpOracle::kRetryDelays[attempt - 1]);
        auto client = make_client(endpoint);
        auto result = send(*client);
        if (result && !transient_status(result->status)) return result;
        last_error = result ? "HTTP " + std::to_string(result->status)
                            : httplib::to_string(result.error());
    }
    throw OracleUnavailableError(std::string(what) + " " + endpoint.address + " failed after " +
                                 std::to_string(attempts) + " attempts: " + last_error);
}

double parse_probability(const json& value, const std::string& body) {
    if (!value.is_number()) throw ProtocolError("non-numeric score in response: " + excerpt(body));
    const double p = value.get<double>();
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
        throw ProtocolError("score outside [0,1] in response: " + excerpt(body));
    }
    return p;
}

}  // namespace

HttpOracle::HttpOracle(OracleEndpoint endpoint)
    : Oracle(endpoint.max_batch), endpoint_(std::move(endpoint)) {
    endpoint_.validate();
}

std::string HttpOracle::health() const {
    auto result = with_retries(endpoint_, "GET /healthz",
                               [](httplib::Client& c) { return c.Get("/healthz"); });
    if (result->status != 200) {
        throw OracleUnavailableError("GET /healthz returned HTTP " +
                                     std::to_string(result->status) + ": " +
                                     excerpt(result->body));
    }
    json doc;
    try {
        doc = json::parse(result->body);
    } catch (const json::exception&) {
        throw ProtocolError("malformed /healthz response: " + excerpt(result->body));
    }
    if (!doc.is_object() || doc.value("status", "") != "ok") {
        throw OracleUnavailableError("oracle not healthy: " + excerpt(result->body));
    }
    return doc.value("model", "");
}

std::vector<OracleScore> HttpOracle::score_request(std::span<const ImageTensor> images,
                                                   std::optional<int> target_class) const {
    const std::string body = encode_predict_request(images);
    std::string path = "/predict";
    if (target_class) path += "?target_class=" + std::to_string(*target_class);

    auto result = with_retries(endpoint_, "POST /predict", [&](httplib::Client& c) {
        return c.Post(path, body, "application/octet-stream");
    });
    if (result->status != 200) {
        throw ProtocolError("POST /predict returned HTTP " + std::to_string(result->status) + ": " +
                            excerpt(result->body));
    }
    json doc;
    try {
        doc = json::parse(result->body);
    } catch (const json::exception&) {
        throw ProtocolError("malformed /predict response: " + excerpt(result->body));
    }

    std::vector<OracleScore> out;
    out.reserve(images.size());
    if (target_class) {
        if (!doc.is_object() || !doc.contains("scores") || !doc["scores"].is_array()) {
            throw ProtocolError("/predict response lacks \"scores\": " + excerpt(result->body));
        }
        for (const auto& v : doc["scores"]) {
            out.push_back(OracleScore{{parse_probability(v, result->body)}, *target_class});
        }
    } else {
        if (!doc.is_object() || !doc.contains("probabilities") || !doc["probabilities"].is_array()) {
            throw ProtocolError("/predict response lacks \"probabilities\": " +
                                excerpt(result->body));
        }
        for (const auto& row : doc["probabilities"]) {
            if (!row.is_array() || row.empty()) {
                throw ProtocolError("bad probability row in response: " + excerpt(result->body));
            }
            OracleScore score;
            double total = 0.0;
            for (const auto& v : row) {
                score.probabilities.push_back(parse_probability(v, result->body));
                total += score.probabilities.back();
            }
            if (std::abs(total - 1.0) > 1e-6) {
                throw ProtocolError("probability row does not sum to 1: " + excerpt(result->body));
            }
            out.push_back(std::move(score));
        }
    }
    if (out.size() != images.size()) {
        throw ProtocolError("/predict returned " + std::to_string(out.size()) + " rows for " +
                            std::to_string(images.size()) + " images: " + excerpt(result->body));
    }
    return out;
}

struct OracleServer::Impl {
    std::shared_ptr<const Oracle> oracle;
    std::string model_name;
    httplib::Server server;
    std::thread thread;
};

OracleServer::OracleServer(std::shared_ptr<const Oracle> oracle, std::string model_name)
    : impl_(std::make_unique<Impl>()) {
    if (!oracle) throw ValidationError("oracle server: null oracle");
    impl_->oracle = std::move(oracle);
    impl_->model_name = std::move(model_name);

    impl_->server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"status", "ok"}, {"model", impl_->model_name}}.dump(),
                        "application/json");
    });

    impl_->server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
        std::optional<int> target;
        std::vector<ImageTensor> images;
        try {
            if (req.has_param("target_class")) target = std::stoi(req.get_param_value("target_class"));
            images = decode_predict_request(req.body);
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            return;
        }
        try {
            const auto scores = impl_->oracle->score_batch(images, target);
            json doc;
            if (target) {
                json values = json::array();
                for (const auto& s : scores) values.push_back(s.target_probability());
                doc["scores"] = std::move(values);
            } else {
                json rows = json::array();
                for (const auto& s : scores) rows.push_back(s.probabilities);
                doc["probabilities"] = std::move(rows);
            }
            res.set_content(doc.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

OracleServer::~OracleServer() { stop(); }

int OracleServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw IoError("oracle server: cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw IoError("oracle server: cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void OracleServer::listen() { impl_->server.listen_after_bind(); }

void OracleServer::start_background() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void OracleServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace saliency_forge

#include "focusloop/vlm_client.hpp"

#include "focusloop/error.hpp"
#include "focusloop/protocol.hpp"

#include <httplib.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <cmath>
#include <cstdlib>
#include <thread>

namespace focusloop::vlm {

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
        case Role::Tool: return "tool";
    }
    return "user";
}

EndpointConfig EndpointConfig::from_json(const nlohmann::json& j) {
    try {
        EndpointConfig c;
        c.base_url = j.at("base_url").get<std::string>();
        c.model = j.at("model").get<std::string>();
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        c.temperature = j.value("temperature", c.temperature);
        c.require_auth = j.value("require_auth", c.require_auth);
        c.tool_role = j.value("tool_role", c.tool_role);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad endpoint config: ") + e.what());
    }
}

void EndpointConfig::validate() const {
    if (!(timeout_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "timeout_s must be positive");
    if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
    if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
        throw Error(ErrorCode::InvalidArgument, "base_url must start with http:// or https://");
    }
}

// Image payloads ------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v >> 24));
    out.push_back(static_cast<char>(v >> 16));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::string body = std::string(type, 4) + data;
    out += body;
    put_u32(out, static_cast<std::uint32_t>(
                     crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const ImageRef& image) {
    const ImageRef src = ensure_pixels(image);
    const int w = src.width();
    const int h = src.height();
    std::string raw;
    raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * static_cast<std::size_t>(w)));
    for (int y = 0; y < h; ++y) {
        raw.push_back('\0');  // filter: none
        for (int x = 0; x < w; ++x) {
            const Rgb p = src.pixel(x, y);
            raw.push_back(static_cast<char>(p.r));
            raw.push_back(static_cast<char>(p.g));
            raw.push_back(static_cast<char>(p.b));
        }
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::string packed(packed_size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), Z_BEST_SPEED) != Z_OK) {
        throw Error(ErrorCode::IoError, "zlib compression failed");
    }
    packed.resize(packed_size);

    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr += std::string{8, 2, 0, 0, 0};  // 8-bit RGB
    std::string png("\x89PNG\r\n\x1a\n", 8);
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", packed);
    put_chunk(png, "IEND", {});
    return png;
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string png_data_url(const ImageRef& image) { return "data:image/png;base64," + base64_encode(encode_png(image)); }

// Client --------------------------------------------------------------------------

ChatClient::ChatClient(EndpointConfig config)
    : config_(std::move(config)), gate_(std::max(config_.max_in_flight, 1)),
      sleep_([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }) {
    config_.validate();
    if (config_.api_key) {
        key_ = config_.api_key;
    } else if (const char* env = std::getenv(kApiKeyEnv); env && *env) {
        key_ = env;
    }
    const auto scheme_end = config_.base_url.find("://") + 3;
    const auto slash = config_.base_url.find('/', scheme_end);
    scheme_host_port_ = config_.base_url.substr(0, slash);
    path_ = slash == std::string::npos ? std::string() : config_.base_url.substr(slash);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
}

nlohmann::json ChatClient::request_body(std::span<const ChatTurn> turns) const {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& turn : turns) {
        if (turn.content.empty()) throw Error(ErrorCode::EmptyInput, "chat turn without content");
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& part : turn.content) {
            if (const auto* text = std::get_if<std::string>(&part)) {
                parts.push_back({{"type", "text"}, {"text", *text}});
            } else {
                parts.push_back(
                    {{"type", "image_url"}, {"image_url", {{"url", png_data_url(std::get<ImageRef>(part))}}}});
            }
        }
        messages.push_back({{"role", to_string(turn.role)}, {"content", parts}});
    }
    return {{"model", config_.model}, {"messages", messages}, {"temperature", config_.temperature}};
}

namespace {

struct GateHold {
    std::counting_semaphore<>& gate;
    explicit GateHold(std::counting_semaphore<>& g) : gate(g) { gate.acquire(); }
    ~GateHold() { gate.release(); }
};

std::string excerpt(const std::string& body) { return body.size() <= 200 ? body : body.substr(0, 200) + "..."; }

std::string extract_text(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        std::string text;
        for (const auto& part : content) {
            if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
        }
        return text;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("unexpected completion payload: ") + e.what());
    }
}

}  // namespace

std::string ChatClient::complete(std::span<const ChatTurn> turns) {
    if (turns.empty()) throw Error(ErrorCode::EmptyInput, "no chat turns");
    if (config_.require_auth && !key_) {
        throw Error(ErrorCode::AuthMissing, std::string(kApiKeyEnv) + " is not set");
    }
    const std::string body = request_body(turns).dump();

    httplib::Headers headers;
    if (key_) headers.emplace("Authorization", "Bearer " + *key_);

    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
    for (int attempt = 0;; ++attempt) {
        std::string failure;
        ErrorCode code = ErrorCode::TransportError;
        {
            GateHold hold(gate_);
            httplib::Client client(scheme_host_port_);
            client.set_connection_timeout(timeout_us);
            client.set_read_timeout(timeout_us);
            client.set_write_timeout(timeout_us);
            const auto start = std::chrono::steady_clock::now();
            auto res = client.Post(path_, headers, body, "application/json");
            if (res) {
                if (res->status >= 200 && res->status < 300) return extract_text(res->body);
                failure = "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body);
                code = ErrorCode::NonSuccessStatus;
                if (res->status != 429 && res->status < 500) throw Error(code, failure);
            } else {
                const auto err = res.error();
                failure = httplib::to_string(err);
                if (err == httplib::Error::ConnectionTimeout) code = ErrorCode::Timeout;
                if (err == httplib::Error::Read) {
                    // Response bytes may have arrived; resending could duplicate work.
                    const bool slow = std::chrono::steady_clock::now() - start >= timeout;
                    throw Error(slow ? ErrorCode::Timeout : ErrorCode::TransportError, "no complete response: " + failure);
                }
                if (err != httplib::Error::Connection && err != httplib::Error::ConnectionTimeout &&
                    err != httplib::Error::Write && err != httplib::Error::SSLConnection) {
                    throw Error(code, failure);
                }
            }
        }
        if (attempt >= config_.max_retries) throw Error(code, failure + " (after " + std::to_string(attempt) + " retries)");
        sleep_(std::chrono::duration<double>(config_.backoff_base_s * std::pow(config_.backoff_factor, attempt)));
    }
}

std::string chat_complete(const EndpointConfig& config, std::span<const ChatTurn> turns) {
    ChatClient client(config);
    return client.complete(turns);
}

// Policies ------------------------------------------------------------------------

const std::string& default_prompt_template() {
    static const std::string t =
        "Answer the question about the image. Reason inside <think></think>. If a detail is too small to "
        "read, request a closer view with\n"
        "<tool_call>{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [x1, y1, x2, y2]}}</tool_call>\n"
        "using pixel coordinates of the most recent image; the zoomed view is returned to you. When you can "
        "answer, put only the final answer inside <answer></answer>.\n"
        "Question: {query}\n"
        "{history}";
    return t;
}

namespace {

std::string fill(std::string text, const std::string& slot, const std::string& value) {
    const auto pos = text.find(slot);
    if (pos != std::string::npos) text.replace(pos, slot.size(), value);
    return text;
}

}  // namespace

std::vector<ChatTurn> build_turns(const focus::TurnContext& ctx, const std::string& prompt_template, bool tool_role) {
    int zooms = 0;
    for (const auto& step : ctx.history) zooms += step.kind() == StepKind::Observation ? 1 : 0;
    const std::string history = zooms ? "Zoomed views so far: " + std::to_string(zooms) + "." : "";

    std::vector<ChatTurn> turns;
    turns.push_back({Role::User,
                     {ContentPart{ctx.root}, ContentPart{fill(fill(prompt_template, "{query}", ctx.query), "{history}",
                                                              history)}}});
    std::vector<protocol::Segment> pending;
    for (const auto& step : ctx.history) {
        switch (step.kind()) {
            case StepKind::Think: pending.push_back(protocol::Segment::think(step.as<ThinkStep>().text)); break;
            case StepKind::ToolCall:
                pending.push_back(protocol::Segment::tool_call(step.as<ToolCallStep>().region));
                break;
            case StepKind::Answer: pending.push_back(protocol::Segment::answer(step.as<AnswerStep>().text)); break;
            case StepKind::Observation: {
                const auto& obs = step.as<ObservationStep>();
                turns.push_back({Role::Assistant, {ContentPart{protocol::serialize_segments(pending)}}});
                pending.clear();
                turns.push_back({tool_role ? Role::Tool : Role::User,
                                 {ContentPart{obs.image}, ContentPart{"Zoomed view (" + std::to_string(obs.image.width()) +
                                                                      "x" + std::to_string(obs.image.height()) + ")."}}});
                break;
            }
        }
    }
    if (!pending.empty()) turns.push_back({Role::Assistant, {ContentPart{protocol::serialize_segments(pending)}}});
    return turns;
}

namespace {

class EndpointPolicy final : public focus::Policy {
public:
    EndpointPolicy(std::shared_ptr<ChatClient> client, std::string prompt)
        : client_(std::move(client)), prompt_(std::move(prompt)) {}

    std::string next_turn(const focus::TurnContext& ctx) override {
        const auto turns = build_turns(ctx, prompt_, client_->config().tool_role);
        return client_->complete(turns);
    }
    bool concurrent_turns() const override { return true; }

private:
    std::shared_ptr<ChatClient> client_;
    std::string prompt_;
};

}  // namespace

std::unique_ptr<focus::Policy> as_policy(std::shared_ptr<ChatClient> client, std::string prompt_template) {
    if (!client) throw Error(ErrorCode::InvalidArgument, "null chat client");
    if (prompt_template.find("{query}") == std::string::npos || prompt_template.find("{history}") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "prompt template needs {query} and {history} slots");
    }
    return std::make_unique<EndpointPolicy>(std::move(client), std::move(prompt_template));
}

ScriptedPolicy::ScriptedPolicy(std::vector<std::string> script) : script_(std::move(script)) {
    if (script_.empty()) throw Error(ErrorCode::InvalidArgument, "empty script");
}

std::string ScriptedPolicy::next_turn(const focus::TurnContext&) {
    if (next_ >= script_.size()) {
        throw Error(ErrorCode::ScriptExhausted, "script has " + std::to_string(script_.size()) + " turns");
    }
    return script_[next_++];
}

}  // namespace focusloop::vlm

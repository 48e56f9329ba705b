#pragma once

#include "focusloop/focus.hpp"
#include "focusloop/image.hpp"

#include <json.hpp>

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace focusloop::vlm {

inline constexpr const char* kApiKeyEnv = "FOCUSLOOP_API_KEY";

struct EndpointConfig {
    /// e.g. "https://host/v1"; requests go to <base_url>/chat/completions.
    std::string base_url;
    std::string model;
    double timeout_s = 60.0;
    int max_retries = 2;
    int max_in_flight = 4;
    double temperature = 0.0;
    bool require_auth = true;
    /// Send observations as role "tool" turns instead of user turns.
    bool tool_role = false;
    /// Overrides the environment variable when set.
    std::optional<std::string> api_key;
    double backoff_base_s = 0.5;
    double backoff_factor = 2.0;

    /// Keys: base_url, model, timeout_s, max_retries, max_in_flight, and
    /// optionally temperature, require_auth, tool_role.
    static EndpointConfig from_json(const nlohmann::json& j);
    void validate() const;
};

enum class Role { System, User, Assistant, Tool };

std::string_view to_string(Role role) noexcept;

using ContentPart = std::variant<std::string, ImageRef>;

struct ChatTurn {
    Role role = Role::User;
    std::vector<ContentPart> content;
};

/// Minimal RGB PNG (8-bit, no interlace) of an image with pixels.
std::string encode_png(const ImageRef& image);
std::string base64_encode(std::string_view bytes);
std::string png_data_url(const ImageRef& image);

/// Chat-completions client shared by concurrent callers. At most
/// max_in_flight requests are outstanding at any time.
class ChatClient {
public:
    explicit ChatClient(EndpointConfig config);

    const EndpointConfig& config() const noexcept { return config_; }

    /// Request body without credentials.
    nlohmann::json request_body(std::span<const ChatTurn> turns) const;

    /// Returns the assistant message text. Connection failures, 429 and 5xx
    /// are retried with exponential backoff; a failure after response bytes
    /// may have arrived is not. Throws AuthMissing, Timeout, TransportError,
    /// NonSuccessStatus, SchemaError, EmptyInput.
    std::string complete(std::span<const ChatTurn> turns);

    /// Test hook replacing std::this_thread::sleep_for between retries.
    void set_sleeper(std::function<void(std::chrono::duration<double>)> sleeper) { sleep_ = std::move(sleeper); }

private:
    EndpointConfig config_;
    std::optional<std::string> key_;
    std::string scheme_host_port_;
    std::string path_;
    std::counting_semaphore<> gate_;
    std::function<void(std::chrono::duration<double>)> sleep_;
};

std::string chat_complete(const EndpointConfig& config, std::span<const ChatTurn> turns);

/// Prompt with "{query}" and "{history}" slots.
const std::string& default_prompt_template();

/// Chat turns for one policy step: the prompt with the root image, then per
/// earlier tool call the assistant text and the zoomed observation image.
std::vector<ChatTurn> build_turns(const focus::TurnContext& ctx, const std::string& prompt_template, bool tool_role);

/// Policy backed by a chat endpoint. Throws InvalidArgument when the template
/// lacks a slot.
std::unique_ptr<focus::Policy> as_policy(std::shared_ptr<ChatClient> client,
                                         std::string prompt_template = default_prompt_template());

/// Returns the k-th script entry on the k-th turn; ScriptExhausted after.
class ScriptedPolicy final : public focus::Policy {
public:
    explicit ScriptedPolicy(std::vector<std::string> script);
    std::string next_turn(const focus::TurnContext& ctx) override;

private:
    std::vector<std::string> script_;
    std::size_t next_ = 0;
};

}  // namespace focusloop::vlm

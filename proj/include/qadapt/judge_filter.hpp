#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qadapt/pool_builder.hpp"
#include "qadapt/relevance.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

struct ChatSpec {
    std::string name = "judge";
    std::string endpoint;
    std::string model;
    std::string auth_env_var;
    double temperature = 0.0;
};

ChatSpec parse_chat_spec(const Json& obj);
ChatSpec load_chat_spec(const std::filesystem::path& path);

struct JudgePrompt {
    std::string system;
    std::string user;
};

/// Annotation instructions with the few-shot block filled in and a closing
/// line that asks for a terminal verdict; user turn is
/// "Query: <query>\nArticle Chunk: <chunk>".
JudgePrompt build_prompt(const std::string& query, const std::string& chunk);

/// Last line of the form `VERDICT: RELEVANT` / `VERDICT: NOT_RELEVANT`
/// (surrounding whitespace and markdown emphasis ignored). nullopt if none.
std::optional<bool> parse_verdict(const std::string& response);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Assistant text for one prompt. TransportError and CredentialError
    /// propagate to the caller.
    virtual std::string complete(const ChatSpec& spec, const JudgePrompt& prompt) = 0;
};

/// Chat-completions JSON: `messages` in, `choices[0].message.content` out.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
    std::string complete(const ChatSpec& spec, const JudgePrompt& prompt) override;

private:
    std::chrono::seconds timeout_;
};

/// Relevant iff every query token occurs among the chunk's tokens.
class MockChatBackend : public ChatBackend {
public:
    std::string complete(const ChatSpec& spec, const JudgePrompt& prompt) override;
    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::atomic<std::size_t> calls_{0};
};

enum class VerdictStatus { decided, undecided };

struct JudgeVerdict {
    std::string query_id;
    std::string chunk_id;
    bool relevant = false;
    std::string raw_response;
    int attempts = 0;
    VerdictStatus status = VerdictStatus::undecided;
    std::string error;  // set when the endpoint failed rather than the format

    friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

struct JudgeOptions {
    std::size_t concurrency = 4;
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{1000};  // between transport failures
    std::filesystem::path verdict_log;              // empty: no log, no resume
};

struct JudgeResult {
    RelevanceLabels qrels;
    std::vector<JudgeVerdict> verdicts;  // sorted by (query, chunk)
    std::size_t reused = 0;              // verdicts taken from the log
};

/// One verdict per pooled pair. With a verdict log, every finished pair is
/// appended as it completes and pairs already in the log are not asked
/// again, except undecided ones that failed at the endpoint. The log is
/// rewritten in sorted order once the pool is done.
JudgeResult judge_pool(const CandidatePool& pool, const std::map<std::string, std::string>& query_texts,
                       const std::map<std::string, std::string>& chunk_texts, ChatBackend& backend,
                       const ChatSpec& spec, const JudgeOptions& options = {});

std::string verdict_to_json_line(const JudgeVerdict& v);
std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);

/// Undecided verdicts only, as JSONL, for manual follow-up.
void write_review_file(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path);

}  // namespace qadapt

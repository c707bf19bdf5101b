#include "qadapt/judge_filter.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "http_json.hpp"
#include "judge_prompt_text.hpp"
#include "qadapt/errors.hpp"

namespace qadapt {

namespace {

constexpr const char* kFewShotMarker = "{few_shot_examples}";
constexpr const char* kOutputClause =
    "\n\nOutput format: after your reasoning, end your reply with one final line that reads exactly "
    "VERDICT: RELEVANT or VERDICT: NOT_RELEVANT.";

std::string system_prompt() {
    std::string s = detail::kJudgeInstructions;
    const auto at = s.find(kFewShotMarker);
    s.replace(at, std::char_traits<char>::length(kFewShotMarker), detail::kJudgeFewShot);
    return s + kOutputClause;
}

std::string strip_decoration(std::string_view line) {
    std::string t = trim(line);
    auto is_decor = [](char c) { return c == '*' || c == '_' || c == '`' || c == '#'; };
    std::size_t b = 0, e = t.size();
    while (b < e && is_decor(t[b])) ++b;
    while (e > b && is_decor(t[e - 1])) --e;
    return trim(std::string_view(t).substr(b, e - b));
}

}  // namespace

ChatSpec parse_chat_spec(const Json& obj) {
    if (!obj.is_object()) throw FormatError("judge spec must be a JSON object");
    ChatSpec s;
    try {
        s.name = obj.value("name", s.name);
        s.endpoint = obj.value("endpoint", std::string());
        s.model = obj.value("model", std::string());
        s.auth_env_var = obj.value("auth_env_var", std::string());
        s.temperature = obj.value("temperature", 0.0);
    } catch (const Json::exception& e) {
        throw FormatError(std::string("judge spec: ") + e.what());
    }
    return s;
}

ChatSpec load_chat_spec(const std::filesystem::path& path) {
    try {
        return parse_chat_spec(Json::parse(read_file(path)));
    } catch (const Json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

JudgePrompt build_prompt(const std::string& query, const std::string& chunk) {
    static const std::string system = system_prompt();
    return {system, "Query: " + query + "\nArticle Chunk: " + chunk};
}

std::optional<bool> parse_verdict(const std::string& response) {
    std::optional<bool> verdict;
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = strip_decoration(line);
        if (t == "VERDICT: RELEVANT") verdict = true;
        else if (t == "VERDICT: NOT_RELEVANT") verdict = false;
    }
    return verdict;
}

std::string HttpChatBackend::complete(const ChatSpec& spec, const JudgePrompt& prompt) {
    Json body;
    body["model"] = spec.model;
    body["temperature"] = spec.temperature;
    body["messages"] = Json::array({{{"role", "system"}, {"content", prompt.system}},
                                    {{"role", "user"}, {"content", prompt.user}}});
    const std::string who = "judge " + spec.name;
    const Json reply = detail::post_json(who, spec.endpoint, spec.auth_env_var, body, timeout_);
    try {
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const Json::exception& e) {
        throw TransportError(who + ": malformed response: " + e.what());
    }
}

std::string MockChatBackend::complete(const ChatSpec&, const JudgePrompt& prompt) {
    ++calls_;
    const std::string& u = prompt.user;
    const std::string sep = "\nArticle Chunk: ";
    const auto at = u.find(sep);
    if (u.rfind("Query: ", 0) != 0 || at == std::string::npos) return "I cannot read this request.";
    const auto query = tokenize(std::string_view(u).substr(7, at - 7));
    const auto chunk = tokenize(std::string_view(u).substr(at + sep.size()));
    const std::set<std::string> have(chunk.begin(), chunk.end());
    std::size_t found = 0;
    for (const auto& t : query) found += have.count(t);
    const bool relevant = !query.empty() && found == query.size();
    return "The chunk contains " + std::to_string(found) + " of " + std::to_string(query.size()) +
           " query terms.\nVERDICT: " + (relevant ? "RELEVANT" : "NOT_RELEVANT");
}

std::string verdict_to_json_line(const JudgeVerdict& v) {
    nlohmann::ordered_json j;
    j["query_id"] = v.query_id;
    j["chunk_id"] = v.chunk_id;
    j["status"] = v.status == VerdictStatus::decided ? "decided" : "undecided";
    j["relevant"] = v.relevant;
    j["attempts"] = v.attempts;
    j["raw_response"] = v.raw_response;
    if (!v.error.empty()) j["error"] = v.error;
    return j.dump() + "\n";
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
    std::vector<JudgeVerdict> out;
    const std::string source = path.string();
    for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
        JudgeVerdict v;
        v.query_id = json_string(obj, "query_id", source, line);
        v.chunk_id = json_string(obj, "chunk_id", source, line);
        const auto status = json_string(obj, "status", source, line);
        if (status == "decided") v.status = VerdictStatus::decided;
        else if (status == "undecided") v.status = VerdictStatus::undecided;
        else throw FormatError(source + ":" + std::to_string(line) + ": unknown status " + status);
        try {
            v.relevant = obj.at("relevant").get<bool>();
            v.attempts = obj.at("attempts").get<int>();
            v.raw_response = obj.value("raw_response", std::string());
            v.error = obj.value("error", std::string());
        } catch (const Json::exception& e) {
            throw FormatError(source + ":" + std::to_string(line) + ": " + e.what());
        }
        out.push_back(std::move(v));
    });
    return out;
}

void write_review_file(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path) {
    std::string out;
    for (const auto& v : verdicts) {
        if (v.status == VerdictStatus::undecided) out += verdict_to_json_line(v);
    }
    write_file_atomic(path, out);
}

JudgeResult judge_pool(const CandidatePool& pool, const std::map<std::string, std::string>& query_texts,
                       const std::map<std::string, std::string>& chunk_texts, ChatBackend& backend,
                       const ChatSpec& spec, const JudgeOptions& options) {
    if (options.max_attempts < 1) throw ContractError("judge needs at least one attempt");
    std::vector<JudgeVerdict> verdicts;
    for (const auto& [q, chunks] : pool.queries) {
        if (!query_texts.count(q)) throw ContractError("no text for pooled query " + q);
        for (const auto& [c, _] : chunks) {
            if (!chunk_texts.count(c)) throw ContractError("no text for pooled chunk " + c);
            JudgeVerdict v;
            v.query_id = q;
            v.chunk_id = c;
            verdicts.push_back(std::move(v));
        }
    }

    JudgeResult result;
    std::vector<std::size_t> todo;
    {
        std::map<std::pair<std::string, std::string>, JudgeVerdict> logged;
        if (!options.verdict_log.empty() && std::filesystem::exists(options.verdict_log)) {
            for (auto& v : read_verdicts(options.verdict_log)) {
                auto key = std::make_pair(v.query_id, v.chunk_id);
                logged[key] = std::move(v);
            }
        }
        for (std::size_t i = 0; i < verdicts.size(); ++i) {
            auto it = logged.find({verdicts[i].query_id, verdicts[i].chunk_id});
            if (it != logged.end() && it->second.error.empty()) {
                verdicts[i] = it->second;
                ++result.reused;
            } else {
                todo.push_back(i);
            }
        }
    }

    std::ofstream log;
    if (!options.verdict_log.empty() && !todo.empty()) {
        if (options.verdict_log.has_parent_path()) std::filesystem::create_directories(options.verdict_log.parent_path());
        log.open(options.verdict_log, std::ios::app | std::ios::binary);
        if (!log) throw StorageError(options.verdict_log.string(), "cannot open verdict log");
    }
    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> credentials_failed{false};
    std::string credential_message;

    auto judge_one = [&](JudgeVerdict& v) {
        const auto prompt = build_prompt(query_texts.at(v.query_id), chunk_texts.at(v.chunk_id));
        for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
            if (credentials_failed.load()) {
                std::lock_guard lock(log_mutex);
                v.error = credential_message;
                return;
            }
            v.attempts = attempt;
            try {
                v.raw_response = backend.complete(spec, prompt);
                v.error.clear();
            } catch (const CredentialError& e) {
                std::lock_guard lock(log_mutex);
                if (!credentials_failed.exchange(true)) credential_message = std::string("credential: ") + e.what();
                v.error = credential_message;
                return;
            } catch (const TransportError& e) {
                v.error = std::string("transport: ") + e.what();
                if (attempt < options.max_attempts) {
                    std::this_thread::sleep_for(options.backoff_base * (1LL << (attempt - 1)));
                }
                continue;
            }
            if (auto verdict = parse_verdict(v.raw_response)) {
                v.relevant = *verdict;
                v.status = VerdictStatus::decided;
                return;
            }
        }
    };

    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= todo.size()) return;
            JudgeVerdict& v = verdicts[todo[k]];
            try {
                judge_one(v);
            } catch (...) {
                std::lock_guard lock(log_mutex);
                if (!failure) failure = std::current_exception();
                next = todo.size();
                return;
            }
            if (log.is_open()) {
                std::lock_guard lock(log_mutex);
                log << verdict_to_json_line(v) << std::flush;
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.concurrency, todo.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (log.is_open()) log.close();
    if (failure) std::rethrow_exception(failure);

    if (!options.verdict_log.empty()) {
        std::string compact;
        for (const auto& v : verdicts) compact += verdict_to_json_line(v);
        write_file_atomic(options.verdict_log, compact);
    }
    for (const auto& v : verdicts) {
        if (v.status == VerdictStatus::decided && v.relevant) result.qrels[v.query_id][v.chunk_id] = 1;
    }
    result.verdicts = std::move(verdicts);
    return result;
}

}  // namespace qadapt

#include "http_json.hpp"

#include <cstdlib>

#include <httplib.h>

#include "qadapt/errors.hpp"

namespace qadapt::detail {

Json post_json(const std::string& who, const std::string& url, const std::string& auth_env_var,
               const Json& body, std::chrono::seconds timeout) {
    std::string key;
    if (!auth_env_var.empty()) {
        const char* v = std::getenv(auth_env_var.c_str());
        if (v == nullptr || *v == '\0') {
            throw CredentialError(who + ": environment variable " + auth_env_var + " is not set");
        }
        key = v;
    }
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ContractError(who + ": endpoint is not an absolute URL: " + url);
    const auto slash = url.find('/', scheme + 3);
    const std::string base = slash == std::string::npos ? url : url.substr(0, slash);
    const std::string path = slash == std::string::npos ? "/" : url.substr(slash);

    httplib::Client client(base);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(who + ": " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403) {
        throw CredentialError(who + ": endpoint rejected the key in " +
                              (auth_env_var.empty() ? std::string("(no auth_env_var configured)") : auth_env_var) +
                              " (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status != 200) throw TransportError(who + ": HTTP " + std::to_string(res->status));
    try {
        return Json::parse(res->body);
    } catch (const Json::parse_error& e) {
        throw TransportError(who + ": malformed response: " + e.what());
    }
}

}  // namespace qadapt::detail

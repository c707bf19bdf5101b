#pragma once

#include <chrono>
#include <string>

#include "qadapt/text_io.hpp"

namespace qadapt::detail {

// POSTs `body` to an absolute URL and returns the parsed JSON reply.
// A non-empty `auth_env_var` must name a set environment variable whose
// value is sent as a bearer token. 401/403 raise CredentialError naming
// the variable; other failures raise TransportError. `who` prefixes
// every message.
Json post_json(const std::string& who, const std::string& url, const std::string& auth_env_var,
               const Json& body, std::chrono::seconds timeout);

}  // namespace qadapt::detail

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <openssl/evp.h>

#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"

namespace stepwise {

/// SHA-256 of a byte string, lowercase hex. Content-addressed manifests use
/// this to pin exactly which inputs produced a run.
inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw Error("cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string file_sha256(const std::filesystem::path& path) {
    return sha256_hex(read_file(path));
}

}  // namespace stepwise

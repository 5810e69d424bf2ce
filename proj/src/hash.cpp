#include "d3ssl/hash.hpp"

#include <fstream>
#include <sstream>

#include <openssl/sha.h>

#include "d3ssl/error.hpp"

namespace d3ssl::hash {

std::string sha1_hex(std::string_view bytes)
{
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned char b : digest)
    {
        out += kHex[b >> 4];
        out += kHex[b & 15];
    }
    return out;
}

std::string git_blob_id(std::string_view content)
{
    std::string data = "blob " + std::to_string(content.size());
    data += '\0';
    data.append(content);
    return sha1_hex(data);
}

std::string file_blob_id(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return git_blob_id(ss.str());
}

} // namespace d3ssl::hash

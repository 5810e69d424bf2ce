#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "d3ssl/error.hpp"
#include "d3ssl/hash.hpp"

using namespace d3ssl;

TEST_CASE("sha1 reference digests")
{
    CHECK(hash::sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    CHECK(hash::sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST_CASE("git blob ids")
{
    CHECK(hash::git_blob_id("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(hash::git_blob_id("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");

    const auto path = std::filesystem::temp_directory_path() / "d3ssl_test_blob.txt";
    {
        std::ofstream out(path, std::ios::binary);
        out << "hello\n";
    }
    CHECK(hash::file_blob_id(path) == "ce013625030ba8dba906f756967f9e9ca394464a");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(hash::file_blob_id(path), DataError);
}

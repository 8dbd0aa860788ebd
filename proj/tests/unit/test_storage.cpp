#include <gtest/gtest.h>

#include "support.hpp"
#include "webedit/blob_store.hpp"
#include "webedit/digest.hpp"
#include "webedit/image.hpp"
#include "webedit/jsonl.hpp"

using namespace webedit;
using webedit::testing::TempDir;

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, Base64RoundTrip) {
  EXPECT_EQ(base64_encode(std::string_view("foobar")), "Zm9vYmFy");
  EXPECT_EQ(base64_encode(std::string_view("fo")), "Zm8=");
  for (std::string s : {"", "a", "ab", "abc", "\x00\xff\x10 binary"}) {
    const auto bytes = base64_decode(base64_encode(std::string_view(s)));
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), s);
  }
  EXPECT_THROW(base64_decode("@@@@"), InputError);
}

TEST(Jsonl, WriteReadAndBadLine) {
  TempDir dir;
  write_jsonl(dir / "a.jsonl", {json{{"x", 1}}, json{{"x", 2}}});
  auto rows = read_jsonl(dir / "a.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1]["x"], 2);

  JsonlAppender app(dir / "a.jsonl");
  app.append({{"x", 3}});
  EXPECT_EQ(read_jsonl(dir / "a.jsonl").size(), 3u);

  write_file_atomic(dir / "bad.jsonl", "{\"x\":1}\n\n{oops\n");
  try {
    read_jsonl(dir / "bad.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(BlobStore, ContentAddressed) {
  TempDir dir;
  BlobStore blobs(dir / "blobs");
  const auto h1 = blobs.put(std::string_view("hello"), "txt");
  const auto h2 = blobs.put(std::string_view("hello"), "txt");
  EXPECT_EQ(h1, h2);
  EXPECT_EQ(h1, sha256_hex("hello"));
  EXPECT_TRUE(blobs.contains(h1, "txt"));
  EXPECT_FALSE(blobs.contains(h1, "png"));
  EXPECT_EQ(blobs.get(h1, "txt"), "hello");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "blobs")) ++files;
  EXPECT_EQ(files, 1u);
}

TEST(Png, RoundTripIsLosslessAndStable) {
  Raster r(17, 9, 0);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      auto* p = r.at(x, y);
      p[0] = static_cast<std::uint8_t>(x * 13);
      p[1] = static_cast<std::uint8_t>(y * 29);
      p[2] = static_cast<std::uint8_t>(x ^ y);
    }
  }
  const std::string png = encode_png(r);
  EXPECT_EQ(decode_png(png), r);
  EXPECT_EQ(encode_png(decode_png(png)), png);
  EXPECT_THROW(decode_png(std::string_view("not a png")), Error);
}

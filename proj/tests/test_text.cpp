#include "ppose/text.hpp"

#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace ppose;

TEST_CASE("tokenize lowercases and splits on whitespace") {
    auto t = tokenize("An Oil  Painting\tphoto of a PERSON");
    REQUIRE(t.size() == 7);
    CHECK(t[0] == "an");
    CHECK(t[2] == "painting");
    CHECK(t[6] == "person");
    CHECK(tokenize("   ").empty());
}

TEST_CASE("template rendering") {
    CHECK(render_template("oil painting", "person") == "An oil painting photo of a person");
    CHECK(render_template("natural", "cat", "", "left eye") ==
          "An natural photo of a left eye of the cat");
    CHECK(render_template("", "dog") == "A photo of a dog");
    CHECK(render_template("natural", "person", "face", "left eye") ==
          "An natural photo of a left eye of the face person");
    CHECK(render_template("", "person", "face", "") == "A photo of a face of the person");
    CHECK_THROWS_AS(render_template("natural", ""), ValidationError);
}

TEST_CASE("keypoint-level strings drop the object tier") {
    CHECK(render_keypoint_string("natural", "left eye") == "An natural photo of a left eye");
    CHECK(render_keypoint_string("", "left eye", "face") == "A photo of a left eye of the face");
}

TEST_CASE("vocabulary maps unknown tokens to <unk> and appends <eos>") {
    Vocabulary v({"photo", "of", "a", "person"});
    CHECK(v.id("photo") == 2);
    CHECK(v.id("zebra") == Vocabulary::kUnk);
    auto ids = v.encode("A photo of a zebra", 16);
    REQUIRE(ids.size() == 6);
    CHECK(ids[0] == v.id("a"));
    CHECK(ids[4] == Vocabulary::kUnk);  // zebra
    CHECK(ids.back() == Vocabulary::kEos);

    // truncation keeps <eos> last
    auto longids = v.encode("photo photo photo photo photo", 4);
    CHECK(longids.size() == 4);
    CHECK(longids.back() == Vocabulary::kEos);
}

TEST_CASE("vocabulary file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ppose_vocab_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "vocab.txt").string();
    Vocabulary v({"alpha", "beta", "gamma"});
    v.save(path);
    Vocabulary w = Vocabulary::load(path);
    CHECK(w.size() == v.size());
    CHECK(w.id("beta") == v.id("beta"));
    CHECK(w.id("<missing>") == Vocabulary::kUnk);
}

TEST_CASE("build_vocabulary collects sorted unique tokens") {
    Vocabulary v = build_vocabulary({"A photo of a cat", "a CAT photo"});
    CHECK(v.id("cat") != Vocabulary::kUnk);
    CHECK(v.id("photo") != Vocabulary::kUnk);
    // "a", "cat", "of", "photo" plus the two reserved slots
    CHECK(v.size() == 6);
}

TEST_CASE("text prompt validation") {
    TextPrompt p;
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p.classes.push_back({"cat", {"left eye", "right eye"}, {}});
    CHECK_NOTHROW(p.validate());

    p.classes.push_back({"cat", {"nose"}, {}});
    CHECK_THROWS_AS(p.validate(), ValidationError);  // duplicate class

    p.classes[1] = {"dog", {"nose", "nose"}, {}};
    CHECK_THROWS_AS(p.validate(), ValidationError);  // duplicate keypoint

    p.classes[1] = {"dog", {"nose"}, {"face", "face"}};
    CHECK_THROWS_AS(p.validate(), ValidationError);  // parts misaligned
}

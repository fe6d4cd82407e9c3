#include "oracles.hpp"

#include "vigil/error.hpp"
#include "vigil/halluscan.hpp"

#include <gtest/gtest.h>

using namespace vigil;

namespace {

const KnowledgeBase& kb() {
    static const KnowledgeBase k = load_kb(oracle::source_path("data/seed_kb.json"));
    return k;
}

std::vector<std::string> scan(std::string_view code) {
    std::vector<std::string> out;
    for (const auto& h : detect_hallucinations(syntax::parse_source(code), kb())) {
        out.push_back(std::string(to_string(h.kind)) + ":" + h.symbol + "@" + std::to_string(h.span.start));
    }
    return out;
}

using V = std::vector<std::string>;

}  // namespace

TEST(Halluscan, FabricatedModules) {
    EXPECT_EQ(scan("import fastjsonx\n"), V{"FabricatedModule:fastjsonx@1"});
    EXPECT_EQ(scan("from secure_utils import clean\n"), V{"FabricatedModule:secure_utils@1"});
    EXPECT_EQ(scan("import os.path\nimport json\n"), V{});
}

TEST(Halluscan, FakeMembersThroughAliases) {
    EXPECT_EQ(scan("import json\njson.parse(s)\n"), V{"FakeAPI:json.parse@2"});
    EXPECT_EQ(scan("import os.path as p\np.joinall(a)\n"), V{"FakeAPI:os.path.joinall@2"});
    EXPECT_EQ(scan("from os import fetch_env\n"), V{"FakeAPI:os.fetch_env@1"});
    EXPECT_EQ(scan("import json\njson.dumps(x)\n"), V{});
}

TEST(Halluscan, UnknownKeywordParameters) {
    EXPECT_EQ(scan("import json\njson.dumps(x, pretty=True)\n"), V{"ParameterHallucination:pretty@2"});
    EXPECT_EQ(scan("import json\njson.dumps(x, indent=2, sort_keys=True)\n"), V{});
    EXPECT_EQ(scan("import requests\nrequests.get(u, **kw)\n"), V{});
}

TEST(Halluscan, UntraceableNamesAreSkipped) {
    EXPECT_EQ(scan("client.fetch_all(x, fancy=True)\n"), V{});
}

TEST(KnowledgeBase, Lookup) {
    const auto v = kb_lookup(kb(), "os.path.join");
    EXPECT_TRUE(v.module_known);
    EXPECT_EQ(v.module, "os.path");
    EXPECT_EQ(v.member_known, true);
    const auto m = kb_lookup(kb(), "os.path");
    EXPECT_FALSE(m.member_known.has_value());
    const auto p = kb_lookup(kb(), "json.dumps", std::string_view("indent"));
    EXPECT_EQ(p.param_accepted, true);
    EXPECT_EQ(kb_lookup(kb(), "json.dumps", std::string_view("pretty")).param_accepted, false);
    EXPECT_FALSE(kb_lookup(kb(), "nosuchmod.x").module_known);
}

TEST(KnowledgeBase, Validation) {
    EXPECT_THROW(parse_kb("{\"version\":\"2.0\",\"modules\":{}}"), InputError);
    EXPECT_THROW(parse_kb("{\"version\":\"1.0\",\"modules\":{\"a\":[\"b\"]},\"params\":{\"a.c\":[\"x\"]}}"), InputError);
    EXPECT_THROW(parse_kb("{\"version\":\"1.0\",\"modules\":{\"a\":[\"b\"]},\"params\":{\"z.b\":[\"x\"]}}"), InputError);
    EXPECT_NO_THROW(parse_kb("{\"version\":\"1.3\",\"modules\":{\"a\":[\"b\"]},\"params\":{\"a.b\":[\"x\"]}}"));
    EXPECT_THROW(load_kb("/nonexistent/kb.json"), InputError);
}

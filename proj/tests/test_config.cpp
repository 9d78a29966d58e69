#include <doctest.h>

#include "apiarius/config.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::config;

TEST_CASE("parse key = value lines with comments") {
  KeyValues kv = parse("# header\nmodel.d_z = 4   # trailing\n\n  eval.folds=2\nname = a b\nmodel.d_z = 5\n");
  CHECK(kv.size() == 3);
  CHECK(kv["model.d_z"] == "5");
  CHECK(kv["eval.folds"] == "2");
  CHECK(kv["name"] == "a b");
}

TEST_CASE("malformed lines name the source and line") {
  try {
    parse("a = 1\nbroken\n", "cfg.txt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("cfg.txt:2") != std::string::npos);
  }
  CHECK_THROWS(parse(" = 3\n"));
}

TEST_CASE("binder types, unknown keys and snapshots") {
  int i = 1;
  double d = 0.5;
  bool b = false;
  uint64_t u = 0;
  std::string s = "x";
  Binder bind;
  bind.bind("i", i);
  bind.bind("d", d);
  bind.bind("b", b);
  bind.bind("u", u);
  bind.bind("s", s);
  bind.apply(parse("i = -3\nd = 1e-3\nb = yes\nu = 18446744073709551615\ns = hello\n"));
  CHECK(i == -3);
  CHECK(d == 1e-3);
  CHECK(b);
  CHECK(u == 18446744073709551615ull);
  CHECK(s == "hello");
  CHECK_THROWS_WITH_AS(bind.set("nope", "1"), doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_AS(bind.set("i", "1.5"), Error);
  CHECK_THROWS_AS(bind.set("d", "abc"), Error);
  CHECK_THROWS_AS(bind.set("b", "maybe"), Error);

  d = 0.1 + 0.2;
  KeyValues snap = bind.snapshot();
  double d2 = 0.0;
  Binder other;
  other.bind("d", d2);
  other.set("d", snap["d"]);
  CHECK(d2 == d);
}

TEST_CASE("write and read a config file") {
  test::TempDir tmp("cfg");
  KeyValues kv = {{"a", "1"}, {"b.c", "two words"}};
  write_file(tmp / "sub" / "c.txt", kv);
  CHECK(read_file(tmp / "sub" / "c.txt") == kv);
  CHECK_THROWS_AS(read_file(tmp / "missing.txt"), IoError);
}

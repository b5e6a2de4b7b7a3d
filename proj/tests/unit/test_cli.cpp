#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "mobkit/io.hpp"
#include "test_util.hpp"

using namespace mobkit;
using namespace mobkit::testing;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(MOBKIT_CLI_PATH) + " -q " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(raw));
  return WEXITSTATUS(raw);
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli exit codes") {
  TempDir dir;
  CHECK(cli("lora-verify --self-test") == 0);
  CHECK(cli("lora-verify --params 4096 4096 64") == 0);
  CHECK(cli("lora-verify --params 8 8 8") == 1);
  CHECK(cli("lora-verify --preset DoRA") == 1);
  CHECK(cli("no-such-command") == 1);

  CHECK(cli("synth --family afc --users 3 --days 8 --out " + q(dir / "raw.csv")) == 0);
  CHECK(cli("ingest --family afc --input " + q(dir / "raw.csv") + " --history 6 --context 3 --test-fraction 0.25 --out " +
            q(dir / "train.jsonl") + " --test-out " + q(dir / "test.jsonl")) == 0);
  CHECK(cli("baseline --kind markov1 --instances " + q(dir / "test.jsonl") + " --out " + q(dir / "out.jsonl")) == 0);
  CHECK(cli("evaluate --outcomes " + q(dir / "out.jsonl") + " --instances " + q(dir / "test.jsonl") + " --out " +
            q(dir / "report.json")) == 0);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(cli("forge-styles --task trip_destination --out " + q(dir / "styles.jsonl")) == 0);
  CHECK(cli("assemble --styles " + q(dir / "styles.jsonl") + " --instances " + q(dir / "train.jsonl") + " --out " +
            q(dir / "ds.jsonl")) == 0);
  CHECK(io::read_jsonl(dir / "ds.jsonl").size() == io::read_jsonl(dir / "train.jsonl").size());

  // Validation failures.
  io::write_text(dir / "bad.toml", "seed = 1\n");
  CHECK(cli("run --config " + q(dir / "bad.toml")) == 1);
  io::write_text(dir / "empty.csv", "user,tap_in_time,tap_out_time,origin,dest\n");
  CHECK(cli("ingest --family afc --input " + q(dir / "empty.csv") + " --out " + q(dir / "x.jsonl")) == 1);
  CHECK(cli("baseline --kind lstm --instances " + q(dir / "test.jsonl") + " --out " + q(dir / "y.jsonl")) == 1);
  CHECK(cli("evaluate --outcomes " + q(dir / "out.jsonl") + " --instances " + q(dir / "train.jsonl") + " --out " +
            q(dir / "r2.json")) == 1);

  // Unreachable endpoint.
  CHECK(cli("forge-styles --task trip_destination --n 3 --base-url http://127.0.0.1:1/v1 --model m --max-retries 0 "
            "--out " + q(dir / "s3.jsonl")) == 3);

  // Runtime failure: output under a regular file.
  CHECK(cli("baseline --instances " + q(dir / "test.jsonl") + " --out " + q(dir / "raw.csv" / "nested.jsonl")) == 2);
}

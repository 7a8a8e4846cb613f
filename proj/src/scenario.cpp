#include <charconv>
#include <set>
#include <sstream>

#include "mtmsim/harness.hpp"

namespace mtmsim {

namespace {

struct Args {
  std::vector<std::string> positional;
  std::map<std::string, std::string> options;  // key=value; bare flags map to ""

  bool flag(const std::string& k) const { return options.contains(k); }
  std::optional<std::string> get(const std::string& k) const {
    auto it = options.find(k);
    return it == options.end() ? std::nullopt : std::optional(it->second);
  }
};

const std::set<std::string> kFlags{"delete-before-send", "source-declines", "dest-declines",
                                   "channel-closed",     "extend-after-lock", "replay-offer"};

Args split_args(const std::vector<std::string>& words, std::size_t from) {
  Args a;
  for (std::size_t i = from; i < words.size(); ++i) {
    const auto& w = words[i];
    auto eq = w.find('=');
    if (eq != std::string::npos)
      a.options[w.substr(0, eq)] = w.substr(eq + 1);
    else if (kFlags.contains(w))
      a.options[w] = "";
    else
      a.positional.push_back(w);
  }
  return a;
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  int base = 10;
  std::string_view sv = s;
  if (sv.rfind("0x", 0) == 0) {
    base = 16;
    sv.remove_prefix(2);
  }
  auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v, base);
  if (ec != std::errc() || p != sv.data() + sv.size()) throw Error(Errc::scenario_syntax, "bad " + what + " '" + s + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void need(const Args& a, std::size_t n, const char* usage) {
  if (a.positional.size() != n) throw Error(Errc::scenario_syntax, std::string("usage: ") + usage);
}

// Minimum positional arity per verb, checked at parse time.
const std::map<std::string, std::size_t>& verbs() {
  static const std::map<std::string, std::size_t> v{
      {"device", 2},   {"agent", 1},  {"takeown", 2}, {"migrate", 3},      {"revoke-tss", 3},
      {"extend", 4},   {"tick", 1},   {"expect", 1},  {"assert", 2},       {"create-key", 3},
      {"sign", 3},     {"attest", 2}, {"advance-counter", 1},
  };
  return v;
}

TrustedSubsystem& tss_of(SimDevice& d, const StakeholderId& ro) {
  auto* tss = d.platform.subsystem(ro);
  if (!tss) throw Error(Errc::no_subsystem, d.name() + "/" + ro);
  return *tss;
}

std::optional<InstanceInfo> instance_of(const SimDevice& d, const StakeholderId& ro) {
  for (const auto& info : d.platform.mtm.instances())
    if (info.stakeholder == ro && !info.pending_import) return info;
  return std::nullopt;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::assertion_failed, what);
}

void run_assert(Simulation& sim, const Args& a) {
  const auto& p = a.positional;
  if (p[0] == "log-valid") {
    for (std::size_t i = 1; i < p.size(); ++i) check(sim.device(p[i]).log.verify(), "log chain of " + p[i]);
    check(sim.trace.verify(), "scenario trace chain");
    return;
  }
  auto& dev = sim.device(p[0]);
  const auto& what = p[1];
  if (what == "tss") {
    if (p.size() != 4) throw Error(Errc::scenario_syntax, "usage: assert <device> tss <ro> <state>");
    auto* tss = dev.platform.subsystem(p[2]);
    std::string actual = tss ? std::string(to_string(tss->engine.state)) : "absent";
    check(actual == p[3], "tss " + p[2] + " is " + actual + ", expected " + p[3]);
  } else if (what == "instance") {
    if (p.size() != 4) throw Error(Errc::scenario_syntax, "usage: assert <device> instance <ro> <lifecycle>");
    auto info = instance_of(dev, p[2]);
    std::string actual = info ? std::string(to_string(info->lifecycle)) : "absent";
    check(actual == p[3], "instance " + p[2] + " is " + actual + ", expected " + p[3]);
  } else if (what == "pcr") {
    if (p.size() != 5) throw Error(Errc::scenario_syntax, "usage: assert <device> pcr <ro> <index> <hex>");
    auto info = instance_of(dev, p[2]);
    check(info.has_value(), "no instance for " + p[2]);
    auto idx = to_u64(p[3], "pcr index");
    if (idx >= kPcrCount) throw Error(Errc::scenario_syntax, "pcr index");
    check(info->pcrs[idx].hex() == p[4], "pcr " + p[3] + " is " + info->pcrs[idx].hex());
  } else {
    throw Error(Errc::scenario_syntax, "unknown assertion '" + what + "'");
  }
}

}  // namespace

SimDevice& Simulation::device(const std::string& name) {
  auto it = devices.find(name);
  if (it == devices.end()) throw Error(Errc::scenario_syntax, "unknown device '" + name + "'");
  return it->second;
}

RemoteOwnerAgent& Simulation::agent(const std::string& name) {
  auto it = agents.find(name);
  if (it == agents.end()) throw Error(Errc::scenario_syntax, "unknown agent '" + name + "'");
  return it->second;
}

int exit_code_for(Errc status) {
  if (status == Errc::ok) return 0;
  return is_protocol_rejection(status) ? 2 : 1;
}

Scenario Scenario::parse(std::string_view text) {
  Scenario sc;
  bool header = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto first = line.find_first_not_of(" \t"); first != std::string::npos && line[first] == '#') continue;
    std::istringstream words_in(line);
    std::vector<std::string> words;
    for (std::string w; words_in >> w;) words.push_back(w);
    if (words.empty()) continue;
    if (!header) {
      if (words.size() != 2 || words[0] != kScenarioHeader)
        throw Error(Errc::scenario_syntax, "line " + std::to_string(line_no) + ": missing scenario header");
      sc.version = static_cast<std::uint32_t>(to_u64(words[1], "version"));
      if (sc.version != kScenarioVersion) throw Error(Errc::version_mismatch, "scenario version " + words[1]);
      header = true;
      continue;
    }
    auto it = verbs().find(words[0]);
    if (it == verbs().end())
      throw Error(Errc::scenario_syntax, "line " + std::to_string(line_no) + ": unknown step '" + words[0] + "'");
    if (split_args(words, 1).positional.size() < it->second)
      throw Error(Errc::scenario_syntax, "line " + std::to_string(line_no) + ": too few arguments for " + words[0]);
    sc.steps.push_back({line_no, std::move(words)});
  }
  if (!header) throw Error(Errc::scenario_syntax, "empty scenario");
  return sc;
}

namespace {

// Executes one step; a rejected protocol run is reported by throwing.
void run_step(Simulation& sim, const ScenarioStep& step) {
  const auto& verb = step.words[0];
  auto a = split_args(step.words, 1);
  const auto& p = a.positional;
  const auto& suite = *sim.suite;

  if (verb == "device") {
    if (p[0] == "create") {
      need(a, 2, "device create <name> [seed=N] [components=N]");
      if (sim.devices.contains(p[1])) throw Error(Errc::scenario_syntax, "device exists: " + p[1]);
      auto seed = a.get("seed") ? to_u64(*a.get("seed"), "seed")
                                : DeterministicRng::from_u64(sim.seed, "device:" + p[1]).next_u64();
      auto components = a.get("components") ? to_u64(*a.get("components"), "components") : 3;
      sim.devices.emplace(p[1], device_create(suite, p[1], seed, DmIdentity::standard(components)));
    } else if (p[0] == "boot") {
      need(a, 2, "device boot <name>");
      if (sim.device(p[1]).boot() != EngineState::running) throw Error(Errc::boot_failed, p[1]);
    } else {
      throw Error(Errc::scenario_syntax, "unknown device action '" + p[0] + "'");
    }
  } else if (verb == "agent") {
    need(a, 1, "agent <name> [id=RO] [seed=N] [purposes=a,b] [policy-version=N]");
    AgentConfig cfg;
    cfg.id = a.get("id").value_or(p[0]);
    cfg.seed = a.get("seed") ? to_u64(*a.get("seed"), "seed")
                             : DeterministicRng::from_u64(sim.seed, "agent:" + p[0]).next_u64();
    if (auto v = a.get("purposes")) cfg.allowed_purposes = split_list(*v);
    if (auto v = a.get("policy-version")) cfg.policy_version = static_cast<std::uint32_t>(to_u64(*v, "policy version"));
    sim.agents.insert_or_assign(p[0], RemoteOwnerAgent(suite, cfg));
  } else if (verb == "takeown") {
    need(a, 2, "takeown <device> <agent> [purpose=P] [tamper-image=OFF:MASK] [swap=C] [fault=PLAN]");
    TakeOwnershipRun run;
    run.transport = sim.transport;
    if (auto v = a.get("purpose")) run.purpose = *v;
    if (auto v = a.get("tamper-image")) {
      auto colon = v->find(':');
      auto off = to_u64(v->substr(0, colon), "offset");
      auto mask = colon == std::string::npos ? 1 : to_u64(v->substr(colon + 1), "mask");
      run.tamper_image = {{off, static_cast<std::uint8_t>(mask)}};
    }
    if (auto v = a.get("swap")) run.swap_component = *v;
    if (auto v = a.get("fault")) run.faults = FaultPlan::parse(*v);
    auto out = run_takeown(sim.device(p[0]), sim.agent(p[1]), run);
    if (out.status != Errc::ok) throw Error(out.status, out.detail);
  } else if (verb == "migrate") {
    need(a, 3, "migrate <source> <dest> <ro> [fault=PLAN] [options]");
    MigrationRun run;
    run.transport = sim.transport;
    if (auto v = a.get("fault")) run.faults = FaultPlan::parse(*v);
    if (auto v = a.get("timeout")) run.protocol.notice_timeout_ticks = to_u64(*v, "timeout");
    run.protocol.delete_before_send = a.flag("delete-before-send");
    run.source_approves = !a.flag("source-declines");
    run.dest_confirms = !a.flag("dest-declines");
    run.channel_open = !a.flag("channel-closed");
    run.extend_after_lock = a.flag("extend-after-lock");
    auto key = p[0] + ">" + p[1] + ">" + p[2];
    if (a.flag("replay-offer")) {
      auto it = sim.recorded_offers.find(key);
      if (it == sim.recorded_offers.end()) throw Error(Errc::scenario_syntax, "no recorded offer for " + key);
      run.replace_offer = it->second;
    }
    auto out = run_migration(sim.device(p[0]), sim.device(p[1]), p[2], run);
    sim.clock += out.ticks;
    if (out.offer && !a.flag("replay-offer")) sim.recorded_offers[key] = *out.offer;
    if (!out.uniqueness_held) throw Error(Errc::assertion_failed, "uniqueness invariant violated");
    if (!out.success) throw Error(out.status, out.detail);
  } else if (verb == "revoke-tss") {
    need(a, 3, "revoke-tss <device> <holder-device> <ro>");
    auto& dev = sim.device(p[0]);
    auto& holder = tss_of(sim.device(p[1]), p[2]);
    if (!holder.certificate) throw Error(Errc::no_subsystem, "no certificate");
    dev.platform.revoke_tss_certificate(holder.certificate->id(), dev.platform.mtm.monotonic_counter());
    dev.record("revoke-tss", holder.certificate->id().view());
  } else if (verb == "extend") {
    need(a, 4, "extend <device> <ro> <pcr> <text>");
    auto& dev = sim.device(p[0]);
    auto& tss = tss_of(dev, p[1]);
    auto idx = to_u64(p[2], "pcr index");
    auto r = dev.platform.mtm.route_command(tss.vmtm, cmd::PcrExtend{static_cast<std::uint8_t>(idx), suite.hash(to_bytes(p[3]))});
    if (!r.ok()) throw Error(r.status, "extend");
    dev.record("extend", to_bytes(p[3]));
  } else if (verb == "advance-counter") {
    need(a, 1, "advance-counter <device> [n=N]");
    auto& dev = sim.device(p[0]);
    auto n = a.get("n") ? to_u64(*a.get("n"), "n") : 1;
    for (std::uint64_t i = 0; i < n; ++i) dev.platform.mtm.advance_counter();
    dev.record("advance-counter");
  } else if (verb == "create-key") {
    need(a, 3, "create-key <device> <ro> <label>");
    auto& dev = sim.device(p[0]);
    auto& tss = tss_of(dev, p[1]);
    auto srk = dev.platform.mtm.inspect(tss.vmtm).srk_id;
    if (!srk) throw Error(Errc::lifecycle_violation, "instance not owned");
    auto r = dev.platform.mtm.route_command(tss.vmtm, cmd::CreateWrapKey{*srk, KeyUsage::signing, {}});
    if (!r.ok()) throw Error(r.status, "create key");
    sim.keys[p[2]] = std::get<resp::KeyInfo>(r.body).key_id;
    dev.record("create-key", sim.keys[p[2]].view());
  } else if (verb == "sign") {
    need(a, 3, "sign <device> <ro> <label>");
    auto& dev = sim.device(p[0]);
    auto& tss = tss_of(dev, p[1]);
    auto it = sim.keys.find(p[2]);
    if (it == sim.keys.end()) throw Error(Errc::scenario_syntax, "unknown key label " + p[2]);
    auto data = to_bytes("scenario-sign:" + p[2]);
    auto r = dev.platform.mtm.route_command(tss.vmtm, cmd::Sign{it->second, data});
    if (!r.ok()) throw Error(r.status, "sign");
    auto pub = dev.platform.mtm.route_command(tss.vmtm, cmd::GetPublicKey{it->second});
    if (!pub.ok() || !suite.verify(std::get<resp::KeyInfo>(pub.body).public_part, data,
                                   std::get<resp::SignatureResult>(r.body).signature))
      throw Error(Errc::bad_signature, "signature does not verify");
    dev.record("sign", it->second.view());
  } else if (verb == "attest") {
    need(a, 2, "attest <device> <agent>");
    auto& dev = sim.device(p[0]);
    auto& agent = sim.agent(p[1]);
    auto nonce = DeterministicRng(suite.hash(concat({to_bytes("attest"), dev.log.head().view()}))).nonce();
    auto report = attest(dev, agent.stakeholder().id, nonce);
    auto verdict = verify_attestation(suite, agent.identity(), agent.policy_template(), report, nonce);
    if (verdict != Errc::ok) throw Error(verdict, "attestation");
  } else if (verb == "tick") {
    need(a, 1, "tick <n>");
    sim.clock += to_u64(p[0], "ticks");
  } else if (verb == "assert") {
    run_assert(sim, a);
  } else {
    throw Error(Errc::scenario_syntax, "unknown step " + verb);
  }
}

}  // namespace

ScenarioResult run_scenario(const Scenario& scenario, Simulation& sim) {
  bool pending = false;  // the previous step failed and awaits an expect
  ScenarioResult failure;
  for (std::size_t i = 0; i < scenario.steps.size(); ++i) {
    const auto& step = scenario.steps[i];
    std::string text;
    for (const auto& w : step.words) text += (text.empty() ? "" : " ") + w;
    sim.trace.append("scenario", "step", to_bytes(text));

    if (step.words[0] == "expect") {
      auto want = step.words[1] == "ok" ? Errc::ok : errc_from_string(step.words[1]);
      if (want == Errc::ok && step.words[1] != "ok")
        return {Errc::scenario_syntax, i + 1, step.line, "unknown error code '" + step.words[1] + "'"};
      auto got = pending ? failure.status : Errc::ok;
      pending = false;
      if (got != want)
        return {Errc::assertion_failed, i + 1, step.line,
                "expected " + std::string(to_string(want)) + ", got " + std::string(to_string(got))};
      sim.trace.append("scenario", "expect-met", to_bytes(to_string(want)));
      continue;
    }
    if (pending) return failure;

    try {
      run_step(sim, step);
      sim.trace.append("scenario", "ok");
    } catch (const Error& e) {
      sim.trace.append("scenario", "error", to_bytes(to_string(e.code())));
      pending = true;
      failure = {e.code(), i + 1, step.line, e.what()};
    }
  }
  if (pending) return failure;
  return {};
}

}  // namespace mtmsim

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtmsim/harness.hpp"

using json = nlohmann::ordered_json;
using namespace mtmsim;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string state_dir = ".";
  std::string format = "text";
  std::string passphrase;
  std::string transport = "inproc";
};

std::filesystem::path device_path(const Globals& g, const std::string& ref) {
  std::filesystem::path p(ref);
  if (ref.find('/') != std::string::npos || p.extension() == ".mtmsim" || std::filesystem::exists(p)) return p;
  return std::filesystem::path(g.state_dir) / (ref + ".mtmsim");
}

TransportKind transport_of(const Globals& g) {
  return g.transport == "socket" ? TransportKind::socket : TransportKind::in_process;
}

AgentConfig load_agent_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot read agent config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::decode_error, std::string("agent config: ") + e.what());
  }
  AgentConfig c;
  c.id = j.value("id", c.id);
  c.seed = j.value("seed", c.seed);
  c.allowed_purposes = j.value("allowed_purposes", c.allowed_purposes);
  c.quality_assertions = j.value("quality_assertions", c.quality_assertions);
  c.policy_version = j.value("policy_version", c.policy_version);
  c.individualization = j.value("individualization", c.individualization);
  return c;
}

json pcrs_json(const PcrBank& pcrs) {
  json out = json::object();
  for (std::size_t i = 0; i < pcrs.size(); ++i)
    if (!pcrs[i].is_zero()) out[std::to_string(i)] = pcrs[i].hex();
  return out;
}

json describe(const SimDevice& d) {
  const auto& p = d.platform;
  json j;
  j["name"] = d.name();
  j["device_id"] = p.device_id().hex();
  j["seed"] = d.seed();
  j["booted"] = p.booted();
  j["counter"] = p.mtm.monotonic_counter();
  j["subsystems"] = json::array();
  for (const auto& [id, tss] : p.subsystems) {
    json s;
    s["stakeholder"] = id;
    s["domain"] = to_string(tss.engine.domain);
    s["engine"] = to_string(tss.engine.state);
    s["purpose"] = tss.engine.purpose;
    s["handle"] = tss.vmtm.value;
    s["services"] = tss.services_own.size();
    s["rim_certs"] = tss.rim_certs.size();
    if (tss.certificate) {
      s["certificate"] = tss.certificate->id().hex();
      s["certificate_signed"] = tss.certificate->issuer_signature.has_value();
    }
    j["subsystems"].push_back(s);
  }
  j["instances"] = json::array();
  for (const auto& info : p.mtm.instances()) {
    json i;
    i["handle"] = info.handle.value;
    i["stakeholder"] = info.stakeholder;
    i["profile"] = to_string(info.profile);
    i["lifecycle"] = to_string(info.lifecycle);
    i["pending_import"] = info.pending_import;
    i["srk"] = info.srk_id ? info.srk_id->hex() : "";
    i["keys"] = info.key_ids.size();
    i["pcrs"] = pcrs_json(info.pcrs);
    j["instances"].push_back(i);
  }
  j["owners"] = json::array();
  for (const auto& [id, o] : p.owners) j["owners"].push_back(id);
  j["log"] = {{"entries", d.log.entries().size()}, {"head", d.log.head().hex()}, {"valid", d.log.verify()}};
  return j;
}

void print_text(const json& j, int indent = 0) {
  std::string pad(indent, ' ');
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      std::cout << pad << k << ":\n";
      print_text(v, indent + 2);
    } else if (v.is_array() && !v.empty() && v.front().is_object()) {
      std::cout << pad << k << ":\n";
      for (const auto& item : v) {
        std::cout << pad << "  -\n";
        print_text(item, indent + 4);
      }
    } else {
      std::cout << pad << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
    }
  }
}

void emit(const Globals& g, const json& j) {
  if (g.format == "json")
    std::cout << j.dump(2) << "\n";
  else
    print_text(j);
}

int finish(const Globals& g, json j, Errc status, const std::string& detail) {
  j["status"] = to_string(status);
  if (status != Errc::ok) j["detail"] = detail;
  emit(g, j);
  return exit_code_for(status);
}

struct StateFileError : std::runtime_error {
  StateFileError(Errc code, const std::string& what) : std::runtime_error(what), code(code) {}
  Errc code;
};

SimDevice load(const Globals& g, const std::string& ref) {
  try {
    return load_state(default_suite(), device_path(g, ref), g.passphrase);
  } catch (const Error& e) {
    throw StateFileError(e.code(), device_path(g, ref).string() + ": " + e.what());
  }
}

void save(const Globals& g, const SimDevice& d, const std::string& ref) {
  persist_state(d, device_path(g, ref), g.passphrase);
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  if (const char* env = std::getenv("MTMSIM_PASSPHRASE")) g.passphrase = env;
  if (g.passphrase.empty()) g.passphrase = "mtmsim";

  CLI::App app{"mtm-sim: simulator for trusted subsystems on virtualised mobile trusted modules"};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "Seed for new devices and scenarios");
  app.add_option("--state-dir", g.state_dir, "Directory holding device state files");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "text"}));
  app.add_option("--passphrase", g.passphrase, "State file passphrase (default $MTMSIM_PASSPHRASE or 'mtmsim')");
  app.add_option("--transport", g.transport, "Channel transport")->check(CLI::IsMember({"inproc", "socket"}));

  std::function<int()> action;

  auto* device = app.add_subcommand("device", "Create, boot or inspect a device");
  device->require_subcommand(1);
  std::string dev_name;
  std::size_t components = 3;
  auto* create = device->add_subcommand("create", "Create a device with a DM subsystem");
  create->add_option("name", dev_name, "Device name")->required();
  create->add_option("--components", components, "Number of DM boot components")->check(CLI::Range(0, 64));
  create->callback([&] {
    action = [&] {
      std::filesystem::create_directories(g.state_dir);
      auto d = device_create(default_suite(), dev_name, g.seed, DmIdentity::standard(components));
      save(g, d, dev_name);
      return finish(g, describe(d), Errc::ok, {});
    };
  });
  auto* boot = device->add_subcommand("boot", "Run the DM boot chain");
  boot->add_option("device", dev_name, "Device name or state file")->required();
  boot->callback([&] {
    action = [&] {
      auto d = load(g, dev_name);
      auto state = d.boot();
      save(g, d, dev_name);
      return finish(g, describe(d), state == EngineState::running ? Errc::ok : Errc::boot_failed, "DM boot failed");
    };
  });
  auto* inspect = device->add_subcommand("inspect", "Show device state");
  inspect->add_option("device", dev_name, "Device name or state file")->required();
  inspect->callback([&] {
    action = [&] { return finish(g, describe(load(g, dev_name)), Errc::ok, {}); };
  });

  auto* takeown = app.add_subcommand("takeown", "Remote take-ownership of a blank subsystem");
  std::string owner_cfg, purpose = "telephony", fault, tamper;
  takeown->add_option("--device", dev_name, "Device name or state file")->required();
  takeown->add_option("--owner", owner_cfg, "Remote owner agent config (JSON)")->required();
  takeown->add_option("--purpose", purpose, "Purpose presented to the owner");
  takeown->add_option("--fault", fault, "Fault plan for the device/owner channel");
  takeown->add_option("--tamper-image", tamper, "Perturb the pristine engine image: OFFSET[:MASK]");
  takeown->callback([&] {
    action = [&] {
      auto d = load(g, dev_name);
      RemoteOwnerAgent agent(default_suite(), load_agent_config(owner_cfg));
      TakeOwnershipRun run;
      run.purpose = purpose;
      run.faults = FaultPlan::parse(fault);
      run.transport = transport_of(g);
      if (!tamper.empty()) {
        auto colon = tamper.find(':');
        run.tamper_image = {{std::stoull(tamper.substr(0, colon)),
                             static_cast<std::uint8_t>(colon == std::string::npos ? 1 : std::stoul(tamper.substr(colon + 1)))}};
      }
      auto out = run_takeown(d, agent, run);
      save(g, d, dev_name);
      json j{{"device", d.name()}, {"owner", agent.stakeholder().id}, {"purpose", purpose},
             {"request_emitted", out.request_emitted}};
      if (const auto* tss = d.platform.subsystem(agent.stakeholder().id)) j["engine"] = to_string(tss->engine.state);
      return finish(g, j, out.status, out.detail);
    };
  });

  auto* migrate = app.add_subcommand("migrate", "Migrate a trusted subsystem between devices");
  std::string source, dest, ro;
  bool delete_before = false;
  std::uint64_t timeout = 30;
  migrate->add_option("--source", source, "Source device")->required();
  migrate->add_option("--dest", dest, "Destination device")->required();
  migrate->add_option("--ro", ro, "Remote owner id")->required();
  migrate->add_option("--fault", fault, "Fault plan, e.g. drop:package,bitflip:offer@9");
  migrate->add_option("--timeout", timeout, "Ticks the source waits for the success notice");
  migrate->add_flag("--delete-before-send", delete_before, "Delete the source instance when the package is sent");
  migrate->callback([&] {
    action = [&] {
      auto s = load(g, source);
      auto d = load(g, dest);
      MigrationRun run;
      run.faults = FaultPlan::parse(fault);
      run.transport = transport_of(g);
      run.protocol.delete_before_send = delete_before;
      run.protocol.notice_timeout_ticks = timeout;
      auto out = run_migration(s, d, ro, run);
      save(g, s, source);
      save(g, d, dest);
      json j{{"source", s.name()},
             {"dest", d.name()},
             {"ro", ro},
             {"ticks", out.ticks},
             {"terminated", out.terminated},
             {"uniqueness_held", out.uniqueness_held}};
      if (out.source_state) j["source_state"] = to_string(*out.source_state);
      if (out.dest_state) j["dest_state"] = to_string(*out.dest_state);
      return finish(g, j, out.status, out.detail);
    };
  });

  auto* attest_cmd = app.add_subcommand("attest", "Quote a subsystem and verify it as the remote owner would");
  attest_cmd->add_option("--device", dev_name, "Device name or state file")->required();
  attest_cmd->add_option("--ro", ro, "Remote owner id")->required();
  attest_cmd->add_option("--owner", owner_cfg, "Agent config to verify against (default: provisioned identity)");
  attest_cmd->callback([&] {
    action = [&] {
      auto d = load(g, dev_name);
      const auto& suite = default_suite();
      auto nonce = DeterministicRng(suite.hash(concat({to_bytes("attest"), d.log.head().view()}))).nonce();
      auto report = attest(d, ro, nonce);
      std::optional<OwnerIdentity> owner;
      SecurityPolicy policy = d.platform.subsystem(ro)->policy;
      if (!owner_cfg.empty()) {
        RemoteOwnerAgent agent(suite, load_agent_config(owner_cfg));
        owner = agent.identity();
        policy = agent.policy_template();
      } else if (const auto* o = d.platform.owner(ro)) {
        owner = *o;
      }
      auto verdict = owner ? verify_attestation(suite, *owner, policy, report, nonce) : Errc::unknown_aik;
      save(g, d, dev_name);
      json pcrs = json::object();
      for (const auto& b : report.quote.pcrs) pcrs[std::to_string(b.index)] = b.value.hex();
      json j{{"device", d.name()},
             {"ro", ro},
             {"certificate", report.certificate.id().hex()},
             {"aik", report.quote.aik_id.hex()},
             {"nonce", to_hex(report.quote.nonce.bytes)},
             {"pcrs", pcrs}};
      return finish(g, j, verdict, "attestation did not verify");
    };
  });

  auto* scenario = app.add_subcommand("scenario", "Run scenario files");
  scenario->require_subcommand(1);
  std::string scenario_file;
  auto* run_cmd = scenario->add_subcommand("run", "Run a scenario file");
  run_cmd->add_option("file", scenario_file, "Scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->callback([&] {
    action = [&] {
      std::ifstream in(scenario_file);
      std::stringstream text;
      text << in.rdbuf();
      auto sc = Scenario::parse(text.str());
      Simulation sim(default_suite(), g.seed, transport_of(g));
      auto result = run_scenario(sc, sim);
      json j{{"scenario", scenario_file}, {"steps", sc.steps.size()}, {"clock", sim.clock}, {"trace_head", sim.trace.head().hex()}};
      json devices = json::object();
      for (const auto& [name, dev] : sim.devices) devices[name] = dev.log.head().hex();
      j["log_heads"] = devices;
      if (!result.ok()) {
        j["failed_step"] = result.step;
        j["line"] = result.line;
      }
      return finish(g, j, result.status, result.message);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    return action ? action() : 1;
  } catch (const StateFileError& e) {
    json j{{"status", to_string(e.code)}, {"detail", e.what()}};
    if (g.format == "json")
      std::cout << j.dump(2) << "\n";
    else
      std::cerr << "mtm-sim: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    json j{{"status", to_string(e.code())}, {"detail", e.what()}};
    if (g.format == "json")
      std::cout << j.dump(2) << "\n";
    else
      std::cerr << "mtm-sim: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "mtm-sim: " << e.what() << "\n";
    return 1;
  }
}

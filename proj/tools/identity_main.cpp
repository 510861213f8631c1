#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "client_common.hpp"
#include "streamkit/identity/identity.hpp"
#include "streamkit/identity/trust.hpp"

using namespace streamkit;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Ed25519 identity, signing and trust management"};
  app.require_subcommand(1);

  std::string home = tools::default_home().string();
  app.add_option("--home", home, "configuration directory (default $STREAMKIT_HOME)");

  std::string init_name, init_san;
  int init_days = 90;
  bool init_force = false;
  auto* init = app.add_subcommand("init", "create a fresh keypair and self-signed certificate");
  init->add_option("name", init_name)->required();
  init->add_option("--san", init_san, "subjectAltName, e.g. IP:127.0.0.1,DNS:localhost");
  init->add_option("--days", init_days, "validity in days");
  init->add_flag("--force", init_force, "overwrite an existing identity");

  std::string sign_pubkey, sign_name, sign_san, sign_out;
  int sign_days = 90;
  auto* sign = app.add_subcommand("sign", "issue a certificate for someone else's public key");
  sign->add_option("pubkey", sign_pubkey, "subject public key PEM file")->required();
  sign->add_option("name", sign_name, "subject name")->required();
  sign->add_option("--san", sign_san, "subjectAltName for the issued certificate");
  sign->add_option("--days", sign_days, "validity in days");
  sign->add_option("-o,--out", sign_out, "write the certificate bundle here (default stdout)");

  auto* trust = app.add_subcommand("trust", "manage the named-service trust store");
  std::string t_nick, t_url, t_ca;
  auto* trust_add = trust->add_subcommand("add", "add or replace a trusted service");
  trust_add->add_option("nickname", t_nick)->required();
  trust_add->add_option("url", t_url)->required();
  trust_add->add_option("ca", t_ca, "issuer CA certificate PEM")->required();
  auto* trust_list = trust->add_subcommand("list", "list trusted services");

  std::uint64_t revoke_serial = 0;
  auto* revoke = app.add_subcommand("revoke", "revoke a signature record by serial");
  revoke->add_option("serial", revoke_serial)->required();

  auto* show = app.add_subcommand("show", "print this identity's certificate and public key");

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path home_dir(home);

    if (*init) {
      identity::Identity id = identity::new_identity(init_name, init_days, init_san);
      identity::save_identity(id, tools::identity_dir(home_dir), init_force);
      std::ofstream pub(home_dir / "pubkey.pem", std::ios::trunc);
      pub << id.public_key_pem();
      std::cout << "identity \"" << init_name << "\" written to "
                << tools::identity_dir(home_dir).string() << "\n";
      return 0;
    }

    if (*sign) {
      identity::Identity issuer = identity::load_identity(tools::identity_dir(home_dir));
      std::ifstream in(sign_pubkey);
      if (!in) throw Error("cannot read " + sign_pubkey);
      std::ostringstream pubkey;
      pubkey << in.rdbuf();

      identity::SignatureDb db(tools::sigdb_path(home_dir));
      auto issued = identity::sign_identity(issuer, pubkey.str(), sign_name, db, sign_days,
                                            sign_san);
      // Bundle: issued leaf + our own chain so the subject can present it.
      std::string bundle = identity::cert_to_pem(issued.cert.get()) + issuer.cert_pem();
      if (sign_out.empty()) {
        std::cout << bundle;
      } else {
        std::ofstream out(sign_out, std::ios::trunc);
        out << bundle;
      }
      std::cerr << "issued serial " << issued.record.serial << " for \"" << sign_name << "\"\n";
      return 0;
    }

    if (*trust) {
      auto store = identity::TrustStore::load(tools::trust_path(home_dir));
      if (*trust_add) {
        store.add({t_nick, t_url, fs::absolute(t_ca)});
        store.save(tools::trust_path(home_dir));
        return 0;
      }
      if (*trust_list) {
        for (const auto& [nick, e] : store.entries()) {
          std::cout << nick << "\t" << e.url << "\t" << e.issuer_ca.string() << "\n";
        }
        return 0;
      }
      std::cerr << "trust: expected add or list\n";
      return 2;
    }

    if (*revoke) {
      identity::SignatureDb db(tools::sigdb_path(home_dir));
      db.revoke(revoke_serial);
      std::cout << "revoked serial " << revoke_serial << "\n";
      return 0;
    }

    if (*show) {
      identity::Identity id = identity::load_identity(tools::identity_dir(home_dir));
      std::cout << id.cert_pem() << id.public_key_pem();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "identity: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// baco-server: exposes synthetic model and scoring backends over HTTP so the
// pipeline can be exercised against the same wire protocol a real deployment
// would use. The bearer token, if any, comes from BACO_API_TOKEN.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <baco/http_server.hpp>
#include <baco/synthetic.hpp>

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return nlohmann::json::parse(buf.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serve synthetic backends over the model/scoring HTTP protocol"};

  std::string model_path, scoring_path, host = "127.0.0.1";
  int port = 8890;
  app.add_option("--model", model_path, "synthetic model config (json)")
      ->check(CLI::ExistingFile);
  app.add_option("--scoring", scoring_path, "synthetic scoring config (json)")
      ->check(CLI::ExistingFile);
  app.add_option("--host", host, "bind address (default 127.0.0.1)");
  app.add_option("--port", port, "bind port (default 8890)")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  if (model_path.empty() && scoring_path.empty()) {
    std::cerr << "error: pass --model and/or --scoring\n";
    return 2;
  }

  try {
    std::shared_ptr<baco::ModelBackend> model;
    std::shared_ptr<baco::ScoringBackends> scoring;
    if (!model_path.empty())
      model = std::make_shared<baco::SyntheticModel>(
          baco::SyntheticModel::Config::from_json(load_json(model_path)));
    if (!scoring_path.empty())
      scoring = std::make_shared<baco::SyntheticScoring>(
          baco::SyntheticScoring::Config::from_json(load_json(scoring_path)));

    std::string bearer;
    if (const char* token = std::getenv("BACO_API_TOKEN")) bearer = token;

    baco::BackendServer server(model, scoring, bearer);
    std::cout << "serving";
    if (model) std::cout << " model=" << model->identity();
    if (scoring) std::cout << " scoring";
    std::cout << " on http://" << host << ":" << port
              << (bearer.empty() ? "" : " (bearer auth)") << "\n";
    if (!server.listen(host, port)) {
      std::cerr << "error: failed to listen on " << host << ":" << port << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

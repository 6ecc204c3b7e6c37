#include "tirelearn/node.hpp"
#include "tirelearn/tires.hpp"

namespace tirelearn {

std::unique_ptr<TireModel> model_from_json(const nlohmann::json& j) {
  const ModelKind kind = parse_model_kind(j.at("model_kind").get<std::string>());
  switch (kind) {
    case ModelKind::fiala: {
      FialaParams p{j.at("cornering_stiffness").get<double>(), j.at("mu").get<double>(), j.at("f_z").get<double>()};
      return std::make_unique<FialaTire>(parse_regime(j.at("regime").get<std::string>()), p,
                                         j.value("longitudinal_stiffness", 0.0));
    }
    case ModelKind::magic_formula: {
      MagicFormulaParams p{j.at("B").get<double>(), j.at("C").get<double>(), j.at("D").get<double>(),
                           j.at("E").get<double>()};
      return std::make_unique<MagicFormulaTire>(parse_regime(j.at("regime").get<std::string>()), p);
    }
    case ModelKind::exptanh_pure:
    case ModelKind::exptanh_combined:
      return ExpTanhTire::from_json(j);
    case ModelKind::node_pure:
      return NodePureTire::from_json(j);
    case ModelKind::node_combined:
      return NodeCombinedTire::from_json(j);
    case ModelKind::distilled_mlp:
      return DistilledTire::from_json(j);
  }
  throw Error(ErrorCode::parse_error, "unhandled model kind");
}

}  // namespace tirelearn

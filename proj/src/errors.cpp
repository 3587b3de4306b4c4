#include "motext/errors.hpp"

namespace motext {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::ZeroNormMean: return "ZeroNormMean";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::EmptyRanks: return "EmptyRanks";
    case ErrorCode::PairMissing: return "PairMissing";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::NoTestInstances: return "NoTestInstances";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Error";
}

}  // namespace motext

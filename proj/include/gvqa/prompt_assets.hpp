// SPDX-License-Identifier: Apache-2.0
#pragma once

// Compiled-in copies of assets/prompts/v1. The asset files are the audit
// record; a test asserts these constants match them byte for byte.

namespace gvqa::prompts {

inline constexpr const char* kVersion = "v1";

inline constexpr const char* kSystem =
    "You are a video assistant. Watch the video and answer the question.";

inline constexpr const char* kCaptionQuestion = "What is happening?";

inline constexpr const char* kReferringQuestionBase = "What is happening";

inline constexpr const char* kJudgeRetrievalSystem =
    "You compare a predicted answer with five options. Reply with only the index, 0 to 4, "
    "of the option closest in meaning to the prediction.";

inline constexpr const char* kJudgeRetrievalUser =
    "Question: {question}\n"
    "Prediction: {prediction}\n"
    "Options:\n"
    "0: {option0}\n"
    "1: {option1}\n"
    "2: {option2}\n"
    "3: {option3}\n"
    "4: {option4}";

inline constexpr const char* kJudgeOpenSystem =
    "You compare a predicted answer with a ground-truth answer. Reply with yes if the "
    "prediction matches the ground truth in meaning, otherwise no. Then reply with score: N, "
    "where N is an integer from 1 to 5 rating the similarity.";

inline constexpr const char* kJudgeOpenUser =
    "Question: {question}\n"
    "Prediction: {prediction}\n"
    "Ground truth: {gt_answer}";

}  // namespace gvqa::prompts

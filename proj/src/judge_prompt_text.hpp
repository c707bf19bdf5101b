#pragma once

// Judge instructions and few-shot examples, kept byte-for-byte. The
// examples replace the {few_shot_examples} marker in the instructions.

namespace qadapt::detail {

inline constexpr const char* kJudgeInstructions = R"PROMPT(Annotation Instructions
The focus is on whether an article chunk would help a support agent answer a query. Key instructions for annotators:

Focus on Problem in the query and Information in article chunk: Determine if the problem described in the query can be answered by the information present in article chunk. If article chunk's information would likely answer the query, then article chunk should be labeled as relevant. For example, if the article chunk explains how to use certain features in the app and the query is also asking how to use those features (even if in different words).

IMPORTANT - Beware of Superficial Word Overlap: Do not label an article chunk as relevant only because it shares some keywords with the query. Read the article chunk and query fully - article chunk and query might both mention a common term (like "login") but could be about different aspects of login (one about UI for the login page, another about authentication). Only consider lexical overlap meaningful if the article chunk contains information to answer the query (e.g. the query asks how to solve a specific login issue, and the article chunk contains information to solve that specific login issue).

{few_shot_examples}

Edge case: In the case article chunk contains only partial information required to answer the query, label it relevant only in the case when it answers the query substantially. Simple lexical overlap does not imply relevance. When in doubt, ask: "Would a support agent benefit from seeing the article chunk while answering the query?" If yes, label it similar; if not, or only minimally, then it's not relevant enough to help in the support workflow.)PROMPT";

inline constexpr const char* kJudgeFewShot = R"PROMPT(Examples of Relevant article chunk:

Example 1: Query: "Where can I find the DevRev API documentation?" and article chunk: "Resources to learn how to use DevRev APIs can be found at https://developer.devrev.ai/". The query is asking about where to find documentation on how to use DevRev APIs and the article chunk contains the information about the location where to find DevRev API documentation. The article chunk should be marked as relevant - it contains the information required to answer the query (even if words differ).

Example 2: Query: "What is a custom object?" and article chunk: "To create a custom object raise a support ticket. Custom objects are DevRev objects which can be customized". Even though the article chunk initially contains the information on how to create a custom object, it later also contains the information on what is a custom object which is what is asked in the query. Mark the article chunk relevant.

Examples of Non-Relevant article chunk:

Example 1: Query: "How to create a vista?" vs article chunk: "Vista is a list of DevRev objects" Both query and article chunk are about vistas and share the word "vista" but the information in article chunk is different from what query is asking about (query is asking how to create a vista, the article chunk is about what are vistas). This article chunk should be marked non relevant - information in the article chunk would not help answer the query.

Example 2: Query: "How to solve FORBIDDEN error when calling custom object API?" vs article chunk: "To solve BAD_REQUEST error when calling custom object API, look for DevRev custom object API documentation and fix your request structure". On the surface the article chunk looks relevant (same feature: custom object API). However, the error nature is different (one is a FORBIDDEN error, another is a BAD_REQUEST error). Unless further context in the article chunk reveals that both are the same errors, treat the article chunk as non relevant because the resolutions of both errors would differ (one might need more permissions, the other requires fixing the request).

Example 3: Query: Resource Center downloads tutorials API documentation vs article chunk: "Prerequisites\n* Send your first API request\n* Making a GET request\n* Next steps\n\nAPI Reference\n\nGetting started\n===============\n\nCopy page\n\nThe DevRev API is organized around REST. Our API has predictable resource-oriented URLs, accepts". On the surface the article chunk appears to be answering the query because it has links to the documentation but the problem is that it is part of start of a webpage so only has relative links and not actual content or complete URL.)PROMPT";

}  // namespace qadapt::detail

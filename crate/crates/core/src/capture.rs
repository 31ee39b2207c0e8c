//! Scripted capture dialog that enriches a memory before extraction.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::extraction::{MediaMetadata, MemoryCapture};
use crate::graph::{ConversationTurn, Role};

pub const DEFAULT_QUESTIONS: [&str; 5] = [
    "Tell me about this moment. What was happening?",
    "Who was there with you?",
    "Where did it happen?",
    "When was it?",
    "How did it feel?",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CaptureError {
    #[error("answer text is empty")]
    EmptyAnswer,
    #[error("the capture has no answers yet")]
    NoAnswers,
}

/// One in-progress capture. Dropping it creates nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSession {
    questions: Vec<String>,
    asked: usize,
    started_at: DateTime<Utc>,
    media: Vec<MediaMetadata>,
    conversation: Vec<ConversationTurn>,
}

impl CaptureSession {
    pub fn start(now: DateTime<Utc>, media: Vec<MediaMetadata>) -> Self {
        Self::with_questions(now, media, DEFAULT_QUESTIONS.iter().map(|q| q.to_string()).collect())
    }

    pub fn with_questions(now: DateTime<Utc>, media: Vec<MediaMetadata>, questions: Vec<String>) -> Self {
        let mut session = Self {
            questions,
            asked: 0,
            started_at: now,
            media,
            conversation: Vec::new(),
        };
        session.ask_next(now);
        session
    }

    fn ask_next(&mut self, now: DateTime<Utc>) {
        if let Some(q) = self.questions.get(self.asked) {
            self.conversation.push(ConversationTurn::assistant(q.clone(), now));
            self.asked += 1;
        }
    }

    /// The question waiting for an answer, if the script is not exhausted.
    pub fn pending_question(&self) -> Option<&str> {
        match self.conversation.last() {
            Some(turn) if turn.role == Role::Assistant => Some(&turn.text),
            _ => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.pending_question().is_none()
    }

    pub fn conversation(&self) -> &[ConversationTurn] {
        &self.conversation
    }

    /// Records an answer and returns the next scripted question.
    pub fn answer(&mut self, text: &str, now: DateTime<Utc>) -> Result<Option<&str>, CaptureError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(CaptureError::EmptyAnswer);
        }
        self.conversation.push(ConversationTurn::user(text, now));
        self.ask_next(now);
        Ok(self.pending_question())
    }

    /// Ends the dialog early or after the script; unanswered trailing
    /// questions are dropped.
    pub fn finish(mut self) -> Result<MemoryCapture, CaptureError> {
        if self.pending_question().is_some() {
            self.conversation.pop();
        }
        if !self.conversation.iter().any(|t| t.role == Role::User) {
            return Err(CaptureError::NoAnswers);
        }
        Ok(MemoryCapture {
            created_at: self.started_at,
            conversation: self.conversation,
            media: self.media,
        })
    }
}

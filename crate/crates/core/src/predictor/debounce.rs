use super::classify::ExitLabel;

/// Emits once after `k` consecutive positives; re-arms after `r`
/// consecutive negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Debouncer {
    k: u32,
    r: u32,
    positives: u32,
    negatives: u32,
    armed: bool,
}

impl Debouncer {
    pub fn new(k: u32, r: u32) -> Self {
        assert!(k >= 1 && r >= 1, "debounce counts must be positive");
        Debouncer { k, r, positives: 0, negatives: 0, armed: true }
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    /// Feeds one label; true when an event fires on this label.
    pub fn push(&mut self, label: ExitLabel) -> bool {
        match label {
            ExitLabel::ExitImminent => {
                self.negatives = 0;
                self.positives = self.positives.saturating_add(1);
                if self.armed && self.positives >= self.k {
                    self.armed = false;
                    return true;
                }
            }
            ExitLabel::NoExit => {
                self.positives = 0;
                self.negatives = self.negatives.saturating_add(1);
                if !self.armed && self.negatives >= self.r {
                    self.armed = true;
                }
            }
        }
        false
    }
}

/// Indices (ticks) at which events fire for a label sequence.
pub fn debounce_and_emit(labels: &[ExitLabel], k: u32, r: u32) -> Vec<usize> {
    let mut d = Debouncer::new(k, r);
    labels.iter().enumerate().filter(|(_, &l)| d.push(l)).map(|(i, _)| i).collect()
}

//! Registry of blocks whose reference parity both parties know.
//!
//! Every entry is a contiguous slot range of one pass layout. Bisected
//! entries keep their two halves as children, so the registered blocks of a
//! pass form one binary tree per top-level block. Each entry stores the
//! reference parity and the working-frame parity; a flip in the working frame
//! toggles the working parity along the root-to-leaf path containing it.

use serde::{Deserialize, Serialize};

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    TopLevel,
    Dichotomic,
    BiconfSubset,
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub layout: u32,
    pub start: u32,
    pub end: u32,
    /// Index of the left child; the right child follows it. `NONE` for leaves.
    pub children: u32,
    pub ref_parity: bool,
    pub work_parity: bool,
    pub searching: bool,
    pub origin: Origin,
}

impl Node {
    #[inline]
    pub fn is_odd(&self) -> bool {
        self.ref_parity != self.work_parity
    }

    #[inline]
    pub fn len(&self) -> u32 {
        self.end - self.start
    }
}

#[derive(Debug, Default)]
pub(crate) struct Registry {
    pub nodes: Vec<Node>,
    /// Entries that turned odd since the scheduler last looked. May hold
    /// stale or duplicate ids; consumers re-check parity.
    pub pending: Vec<u32>,
}

impl Registry {
    pub fn add(&mut self, node: Node) -> u32 {
        let id = self.nodes.len() as u32;
        if node.is_odd() {
            self.pending.push(id);
        }
        self.nodes.push(node);
        id
    }

    /// Register both halves of `parent` without queueing them.
    pub fn add_children(&mut self, parent: u32, left: Node, right: Node) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(left);
        self.nodes.push(right);
        self.nodes[parent as usize].children = id;
        id
    }

    /// Toggle the working parity of every registered block on the path from
    /// `root` down to the leaf containing `slot`.
    pub fn toggle_path(&mut self, root: u32, slot: u32) {
        let mut id = root;
        loop {
            let node = &mut self.nodes[id as usize];
            debug_assert!(node.start <= slot && slot < node.end);
            node.work_parity = !node.work_parity;
            if node.is_odd() {
                self.pending.push(id);
            }
            let left = node.children;
            if left == NONE {
                break;
            }
            id = if slot < self.nodes[left as usize].end { left } else { left + 1 };
        }
    }

    /// Smallest registered odd block under an odd entry.
    pub fn odd_leaf(&self, mut id: u32) -> u32 {
        debug_assert!(self.nodes[id as usize].is_odd());
        loop {
            let left = self.nodes[id as usize].children;
            if left == NONE {
                return id;
            }
            id = if self.nodes[left as usize].is_odd() { left } else { left + 1 };
        }
    }
}

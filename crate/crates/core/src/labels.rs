use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a monitored or simulated beacon node.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeLabel {
    pub node_id: String,
    pub location: String,
    pub client: String,
}

impl NodeLabel {
    pub fn new(node_id: impl Into<String>, location: impl Into<String>, client: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            location: location.into(),
            client: client.into(),
        }
    }

    pub fn group(&self, by: GroupBy) -> &str {
        match by {
            GroupBy::Location => &self.location,
            GroupBy::Client => &self.client,
            GroupBy::Node => &self.node_id,
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}/{}", self.node_id, self.location, self.client)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    Location,
    Client,
    Node,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "location" => Ok(GroupBy::Location),
            "client" => Ok(GroupBy::Client),
            "node" => Ok(GroupBy::Node),
            other => Err(format!("unknown grouping `{other}` (location|client|node)")),
        }
    }
}

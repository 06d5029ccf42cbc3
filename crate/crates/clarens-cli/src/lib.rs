//! Shared pieces of the command-line client: typed-literal parsing and the
//! table of RPC methods the client covers.

pub mod literal;

/// Every RPC method this client can drive. The coverage test checks a live
/// server's `system.list_methods` output against this table, so a new server
/// method that the client does not know about fails the build's tests.
pub const METHOD_TABLE: &[&str] = &[
    "catalog.add",
    "catalog.lookup",
    "catalog.remove",
    "df.df",
    "discovery.deregister",
    "discovery.find",
    "discovery.find_server",
    "discovery.register",
    "dls.locate",
    "dls.record_access",
    "echo.echo",
    "file.get",
    "file.ls",
    "file.put",
    "group.add",
    "group.create",
    "group.delete",
    "group.list",
    "group.remove",
    "metrics.query",
    "metrics.report",
    "shell.cmd",
    "shell.cmd_info",
    "shell.cmd_kill",
    "system.acl_add",
    "system.acl_list",
    "system.acl_remove",
    "system.list_methods",
    "system.whoami",
];

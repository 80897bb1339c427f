"""Token protocol: message formats, user-side roles and the server-side Step-2 program.

Server code imports only ``wire``, ``messages``, ``crypto`` and ``step2``;
``booking``, ``roles`` and ``oracle`` handle cleartext and stay on user devices.
"""
